/**
 * SVG figure builders over cesched-bench CSV output.
 *
 * Four figure kinds:
 *   throughput       - throughput vs worker count, one line per policy
 *   speedup-heatmap  - ces/dispatch throughput ratio per (threads, cs_ns) cell
 *   rw-throughput    - rw-mutex throughput vs writer percentage per policy
 *   delay-hist       - histogram of measured queuing delays with the median
 *
 * Rendering is pure: the same CSV bytes produce the same SVG bytes. No
 * timestamps, no locale formatting, no randomness.
 */

import { CsvTable, asNumber, columns } from "./csv.js";

export const KINDS = [
  "throughput",
  "speedup-heatmap",
  "rw-throughput",
  "delay-hist",
] as const;
export type Kind = (typeof KINDS)[number];

const POLICY_COLORS: Record<string, string> = {
  ces: "#2a6fdb",
  dispatch: "#d1495b",
  inline: "#66876f",
};

const W = 640;
const H = 400;
const MARGIN = { left: 70, right: 24, top: 36, bottom: 52 };

function esc(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

function fmt(v: number): string {
  if (!Number.isFinite(v)) return "0";
  if (Math.abs(v) >= 1000) return v.toFixed(0);
  if (Math.abs(v) >= 10) return v.toFixed(1);
  return v.toFixed(2);
}

function niceTicks(min: number, max: number, count: number): number[] {
  const range = max - min || 1;
  const rough = range / count;
  const mag = Math.pow(10, Math.floor(Math.log10(rough)));
  const step = [1, 2, 5, 10].map((m) => m * mag).find((n) => n >= rough) ?? rough;
  const out: number[] = [];
  for (let v = Math.ceil(min / step) * step; v <= max + step * 1e-9; v += step) {
    out.push(v);
  }
  return out;
}

interface Frame {
  x: (v: number) => number;
  y: (v: number) => number;
  plotW: number;
  plotH: number;
}

function openSvg(title: string): string {
  return (
    `<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 ${W} ${H}" ` +
    `font-family="Helvetica, Arial, sans-serif">\n` +
    `<rect width="${W}" height="${H}" fill="#ffffff"/>\n` +
    `<text x="${MARGIN.left}" y="20" font-size="13" font-weight="600" fill="#222">` +
    `${esc(title)}</text>\n`
  );
}

function frameAndAxes(
  xMin: number,
  xMax: number,
  yMin: number,
  yMax: number,
  xLabel: string,
  yLabel: string,
  xTickValues?: number[]
): { svg: string; frame: Frame } {
  const plotW = W - MARGIN.left - MARGIN.right;
  const plotH = H - MARGIN.top - MARGIN.bottom;
  const x = (v: number) =>
    MARGIN.left + ((v - xMin) / (xMax - xMin || 1)) * plotW;
  const y = (v: number) =>
    MARGIN.top + plotH - ((v - yMin) / (yMax - yMin || 1)) * plotH;
  let s = "";
  for (const t of niceTicks(yMin, yMax, 6)) {
    const yy = y(t).toFixed(1);
    s += `<line x1="${MARGIN.left}" y1="${yy}" x2="${MARGIN.left + plotW}" y2="${yy}" stroke="#eeeeee" stroke-width="1"/>\n`;
    s += `<text x="${MARGIN.left - 6}" y="${(y(t) + 4).toFixed(1)}" text-anchor="end" font-size="10" fill="#555">${esc(fmt(t))}</text>\n`;
  }
  const xt = xTickValues ?? niceTicks(xMin, xMax, 8);
  for (const t of xt) {
    const xx = x(t).toFixed(1);
    s += `<line x1="${xx}" y1="${MARGIN.top + plotH}" x2="${xx}" y2="${MARGIN.top + plotH + 4}" stroke="#333" stroke-width="1"/>\n`;
    s += `<text x="${xx}" y="${MARGIN.top + plotH + 16}" text-anchor="middle" font-size="10" fill="#555">${esc(fmt(t))}</text>\n`;
  }
  s += `<line x1="${MARGIN.left}" y1="${MARGIN.top}" x2="${MARGIN.left}" y2="${MARGIN.top + plotH}" stroke="#333" stroke-width="1"/>\n`;
  s += `<line x1="${MARGIN.left}" y1="${MARGIN.top + plotH}" x2="${MARGIN.left + plotW}" y2="${MARGIN.top + plotH}" stroke="#333" stroke-width="1"/>\n`;
  s += `<text x="${MARGIN.left + plotW / 2}" y="${H - 12}" text-anchor="middle" font-size="11" fill="#333">${esc(xLabel)}</text>\n`;
  s += `<text x="16" y="${MARGIN.top + plotH / 2}" text-anchor="middle" font-size="11" fill="#333" transform="rotate(-90,16,${MARGIN.top + plotH / 2})">${esc(yLabel)}</text>\n`;
  return { svg: s, frame: { x, y, plotW, plotH } };
}

function legend(entries: Array<{ label: string; color: string }>): string {
  let s = "";
  let i = 0;
  for (const e of entries) {
    const lx = MARGIN.left + 12;
    const ly = MARGIN.top + 10 + i * 14;
    s += `<line x1="${lx}" y1="${ly}" x2="${lx + 16}" y2="${ly}" stroke="${e.color}" stroke-width="2"/>\n`;
    s += `<text x="${lx + 20}" y="${ly + 3}" font-size="10" fill="#333">${esc(e.label)}</text>\n`;
    i += 1;
  }
  return s;
}

interface BenchRow {
  policy: string;
  threads: number;
  cs_ns: number;
  writer_pct: number | null;
  throughput: number;
}

const BENCH_COLUMNS = ["bench", "policy", "threads", "cs_ns", "writer_pct", "throughput_ops_s"];

function benchRows(table: CsvTable, path: string): BenchRow[] {
  const col = columns(table, BENCH_COLUMNS, path);
  return table.rows.map((r) => ({
    policy: col(r, "policy"),
    threads: asNumber(col(r, "threads")) ?? 0,
    cs_ns: asNumber(col(r, "cs_ns")) ?? 0,
    writer_pct: asNumber(col(r, "writer_pct")),
    throughput: asNumber(col(r, "throughput_ops_s")) ?? 0,
  }));
}

function seriesByPolicy(
  rows: BenchRow[],
  xOf: (r: BenchRow) => number
): Map<string, Array<[number, number]>> {
  const out = new Map<string, Array<[number, number]>>();
  for (const r of rows) {
    if (!out.has(r.policy)) out.set(r.policy, []);
    out.get(r.policy)!.push([xOf(r), r.throughput]);
  }
  for (const pts of out.values()) pts.sort((a, b) => a[0] - b[0]);
  return out;
}

function lineChart(
  title: string,
  series: Map<string, Array<[number, number]>>,
  xLabel: string,
  yLabel: string
): string {
  const allX = [...series.values()].flat().map((p) => p[0]);
  const allY = [...series.values()].flat().map((p) => p[1]);
  const xMin = Math.min(...allX);
  const xMax = Math.max(...allX);
  const yMax = Math.max(...allY) * 1.08;
  const { svg, frame } = frameAndAxes(xMin, xMax, 0, yMax, xLabel, yLabel, [...new Set(allX)].sort((a, b) => a - b));
  let s = openSvg(title) + svg;
  const legendEntries: Array<{ label: string; color: string }> = [];
  for (const policy of [...series.keys()].sort()) {
    const color = POLICY_COLORS[policy] ?? "#777777";
    const pts = series
      .get(policy)!
      .map(([px, py]) => `${frame.x(px).toFixed(1)},${frame.y(py).toFixed(1)}`)
      .join(" ");
    s += `<polyline fill="none" stroke="${color}" stroke-width="2" points="${pts}"/>\n`;
    for (const [px, py] of series.get(policy)!) {
      s += `<circle cx="${frame.x(px).toFixed(1)}" cy="${frame.y(py).toFixed(1)}" r="3" fill="${color}"/>\n`;
    }
    legendEntries.push({ label: policy, color });
  }
  s += legend(legendEntries);
  return s + "</svg>\n";
}

export function renderThroughput(table: CsvTable, path: string): string {
  const rows = benchRows(table, path);
  if (rows.length === 0) throw new Error(`input ${path} has no data rows`);
  return lineChart(
    "Mutex throughput by unlock policy",
    seriesByPolicy(rows, (r) => r.threads),
    "workers",
    "throughput (ops/s)"
  );
}

export function renderRwThroughput(table: CsvTable, path: string): string {
  const rows = benchRows(table, path).filter((r) => r.writer_pct !== null);
  if (rows.length === 0) {
    throw new Error(`input ${path} has no rows with a writer_pct value`);
  }
  return lineChart(
    "Reader-writer mutex throughput by writer percentage",
    seriesByPolicy(rows, (r) => r.writer_pct as number),
    "writer percentage",
    "throughput (ops/s)"
  );
}

export function renderSpeedupHeatmap(table: CsvTable, path: string): string {
  const rows = benchRows(table, path);
  if (rows.length === 0) throw new Error(`input ${path} has no data rows`);
  const byCell = new Map<string, Map<string, number>>();
  const threads = [...new Set(rows.map((r) => r.threads))].sort((a, b) => a - b);
  const lengths = [...new Set(rows.map((r) => r.cs_ns))].sort((a, b) => a - b);
  for (const r of rows) {
    const key = `${r.threads}|${r.cs_ns}`;
    if (!byCell.has(key)) byCell.set(key, new Map());
    byCell.get(key)!.set(r.policy, r.throughput);
  }
  const plotW = W - MARGIN.left - MARGIN.right;
  const plotH = H - MARGIN.top - MARGIN.bottom;
  const cw = plotW / lengths.length;
  const ch = plotH / threads.length;
  const ratios: number[] = [];
  for (const cell of byCell.values()) {
    const c = cell.get("ces");
    const d = cell.get("dispatch");
    if (c !== undefined && d !== undefined && d > 0) ratios.push(c / d);
  }
  const rMax = ratios.length ? Math.max(...ratios, 1) : 1;
  let s = openSvg("Speedup of ces over dispatch by workers and critical-section length");
  for (let ti = 0; ti < threads.length; ti++) {
    for (let li = 0; li < lengths.length; li++) {
      const cell = byCell.get(`${threads[ti]}|${lengths[li]}`);
      const c = cell?.get("ces");
      const d = cell?.get("dispatch");
      const x0 = (MARGIN.left + li * cw).toFixed(1);
      const y0 = (MARGIN.top + (threads.length - 1 - ti) * ch).toFixed(1);
      if (c === undefined || d === undefined || d <= 0) {
        // missing or invalid cells stay blank, never interpolated
        s += `<rect x="${x0}" y="${y0}" width="${cw.toFixed(1)}" height="${ch.toFixed(1)}" fill="none" stroke="#cccccc" stroke-dasharray="3,3"/>\n`;
        continue;
      }
      const ratio = c / d;
      const heat = Math.max(0, Math.min(1, ratio / rMax));
      const red = Math.round(42 + heat * (219 - 42));
      const green = Math.round(111 - heat * 40);
      const blue = Math.round(219 - heat * (219 - 91));
      s += `<rect x="${x0}" y="${y0}" width="${cw.toFixed(1)}" height="${ch.toFixed(1)}" fill="rgb(${red},${green},${blue})" stroke="#ffffff"/>\n`;
      s += `<text x="${(MARGIN.left + li * cw + cw / 2).toFixed(1)}" y="${(MARGIN.top + (threads.length - 1 - ti) * ch + ch / 2 + 4).toFixed(1)}" text-anchor="middle" font-size="11" fill="#ffffff">${esc(ratio.toFixed(2))}</text>\n`;
    }
  }
  for (let li = 0; li < lengths.length; li++) {
    s += `<text x="${(MARGIN.left + li * cw + cw / 2).toFixed(1)}" y="${MARGIN.top + plotH + 16}" text-anchor="middle" font-size="10" fill="#555">${esc(String(lengths[li]))}</text>\n`;
  }
  for (let ti = 0; ti < threads.length; ti++) {
    s += `<text x="${MARGIN.left - 6}" y="${(MARGIN.top + (threads.length - 1 - ti) * ch + ch / 2 + 4).toFixed(1)}" text-anchor="end" font-size="10" fill="#555">${esc(String(threads[ti]))}</text>\n`;
  }
  s += `<text x="${MARGIN.left + plotW / 2}" y="${H - 12}" text-anchor="middle" font-size="11" fill="#333">critical-section length (ns)</text>\n`;
  s += `<text x="16" y="${MARGIN.top + plotH / 2}" text-anchor="middle" font-size="11" fill="#333" transform="rotate(-90,16,${MARGIN.top + plotH / 2})">workers</text>\n`;
  return s + "</svg>\n";
}

const DELAY_COLUMNS = ["mutex_id", "task_id", "t_sync_ns", "t_queue_ns"];

export function renderDelayHist(table: CsvTable, path: string): string {
  const col = columns(table, DELAY_COLUMNS, path);
  const values = table.rows
    .map((r) => asNumber(col(r, "t_queue_ns")))
    .filter((v): v is number => v !== null)
    .sort((a, b) => a - b);
  if (values.length === 0) throw new Error(`input ${path} has no queuing-delay samples`);
  const median = values[Math.floor(values.length / 2)];
  const max = values[values.length - 1];
  const bins = 30;
  const width = max / bins || 1;
  const counts = new Array<number>(bins).fill(0);
  for (const v of values) {
    counts[Math.min(bins - 1, Math.floor(v / width))] += 1;
  }
  const { svg, frame } = frameAndAxes(0, max / 1000, 0, Math.max(...counts) * 1.1,
    "queuing delay (us)", "samples");
  let s = openSvg("Queuing delay of dispatch scheduling") + svg;
  for (let i = 0; i < bins; i++) {
    if (counts[i] === 0) continue;
    const x0 = frame.x((i * width) / 1000);
    const x1 = frame.x(((i + 1) * width) / 1000);
    const y0 = frame.y(counts[i]);
    const base = frame.y(0);
    s += `<rect x="${x0.toFixed(1)}" y="${y0.toFixed(1)}" width="${(x1 - x0).toFixed(1)}" height="${(base - y0).toFixed(1)}" fill="#d1495b" stroke="#ffffff" stroke-width="0.5"/>\n`;
  }
  const mx = frame.x(median / 1000).toFixed(1);
  s += `<line x1="${mx}" y1="${MARGIN.top}" x2="${mx}" y2="${frame.y(0).toFixed(1)}" stroke="#222222" stroke-width="1.5" stroke-dasharray="5,4"/>\n`;
  s += `<text x="${mx}" y="${MARGIN.top - 4}" text-anchor="middle" font-size="10" fill="#222">median ${esc((median / 1000).toFixed(1))} us</text>\n`;
  return s + "</svg>\n";
}

export function render(kind: Kind, table: CsvTable, path: string): string {
  switch (kind) {
    case "throughput":
      return renderThroughput(table, path);
    case "speedup-heatmap":
      return renderSpeedupHeatmap(table, path);
    case "rw-throughput":
      return renderRwThroughput(table, path);
    case "delay-hist":
      return renderDelayHist(table, path);
  }
}
