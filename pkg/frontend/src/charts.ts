/**
 * SVG chart rendering. Solid bars only (no outline/mixed styles), dark text
 * for titles and axes, legends for multi-series charts. Values arrive
 * pre-computed from the API; this module only draws them.
 */

export const BG_COLOR = '#ffffff';
export const TEXT_COLOR = '#1f2937';
export const AXIS_COLOR = '#374151';
export const BAR_COLOR = '#1d4ed8';
export const PROJECTION_COLOR = '#047857';
export const SERIES_COLORS = ['#1d4ed8', '#b45309'];

const SVG_NS = 'http://www.w3.org/2000/svg';

/** Relative luminance per WCAG 2.x. */
function luminance(hex: string): number {
  const n = parseInt(hex.replace('#', ''), 16);
  const chan = (v: number) => {
    const c = v / 255;
    return c <= 0.03928 ? c / 12.92 : Math.pow((c + 0.055) / 1.055, 2.4);
  };
  const r = chan((n >> 16) & 0xff);
  const g = chan((n >> 8) & 0xff);
  const b = chan(n & 0xff);
  return 0.2126 * r + 0.7152 * g + 0.0722 * b;
}

/** WCAG contrast ratio between two hex colors, in [1, 21]. */
export function contrastRatio(fg: string, bg: string): number {
  const a = luminance(fg);
  const b = luminance(bg);
  const [hi, lo] = a > b ? [a, b] : [b, a];
  return (hi + 0.05) / (lo + 0.05);
}

export interface BarDatum {
  label: string;
  value: number | null;
  /** Rendered in a visually distinct solid color (forecast projections). */
  projected?: boolean;
  /** Series name for grouped bars; single-series charts omit it. */
  series?: string;
}

export interface ChartOptions {
  title: string;
  unit?: string;
  width?: number;
  height?: number;
  onBarClick?: (d: BarDatum) => void;
}

function el(doc: Document, tag: string, attrs: Record<string, string>): SVGElement {
  const node = doc.createElementNS(SVG_NS, tag) as SVGElement;
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  return node;
}

function text(doc: Document, x: number, y: number, content: string,
              cls: string, size = 12): SVGElement {
  const t = el(doc, 'text', {
    x: String(x), y: String(y), fill: TEXT_COLOR,
    'font-size': String(size), class: cls,
  });
  t.textContent = content;
  return t;
}

function formatValue(v: number | null): string {
  if (v === null) return 'n/a';
  return Number.isInteger(v) ? String(v) : v.toFixed(2);
}

/**
 * Render a solid-bar chart. Multi-series data (distinct `series` names)
 * gets grouped bars plus a legend.
 */
export function renderBarChart(doc: Document, data: BarDatum[],
                               opts: ChartOptions): SVGElement {
  const width = opts.width ?? 420;
  const height = opts.height ?? 220;
  const margin = { top: 34, right: 10, bottom: 42, left: 10 };
  const svg = el(doc, 'svg', {
    width: String(width), height: String(height),
    viewBox: `0 0 ${width} ${height}`, role: 'img',
  });
  svg.appendChild(el(doc, 'rect', {
    x: '0', y: '0', width: String(width), height: String(height),
    fill: BG_COLOR, class: 'chart-bg',
  }));
  svg.appendChild(text(doc, margin.left, 20, opts.title, 'chart-title', 14));

  const seriesNames = [...new Set(data.map((d) => d.series ?? ''))];
  const colorFor = (d: BarDatum): string => {
    if (d.projected) return PROJECTION_COLOR;
    if (seriesNames.length > 1) {
      return SERIES_COLORS[seriesNames.indexOf(d.series ?? '') % SERIES_COLORS.length];
    }
    return BAR_COLOR;
  };

  const labels = [...new Set(data.map((d) => d.label))];
  const plotW = width - margin.left - margin.right;
  const plotH = height - margin.top - margin.bottom;
  const groupW = plotW / Math.max(1, labels.length);
  const barW = (groupW * 0.8) / Math.max(1, seriesNames.length);
  const maxVal = Math.max(1e-12, ...data.map((d) => Math.abs(d.value ?? 0)));

  svg.appendChild(el(doc, 'line', {
    x1: String(margin.left), y1: String(margin.top + plotH),
    x2: String(margin.left + plotW), y2: String(margin.top + plotH),
    stroke: AXIS_COLOR, class: 'chart-axis',
  }));

  for (const d of data) {
    const gi = labels.indexOf(d.label);
    const si = seriesNames.indexOf(d.series ?? '');
    const x = margin.left + gi * groupW + groupW * 0.1 + si * barW;
    const v = d.value ?? 0;
    const h = d.value === null ? 0 : (Math.abs(v) / maxVal) * plotH;
    const bar = el(doc, 'rect', {
      x: String(x), y: String(margin.top + plotH - h),
      width: String(Math.max(1, barW - 2)), height: String(h),
      fill: colorFor(d), stroke: 'none',
      class: d.projected ? 'bar projected' : 'bar',
      'data-label': d.label, 'data-value': formatValue(d.value),
    });
    if (opts.onBarClick) {
      bar.addEventListener('click', () => opts.onBarClick!(d));
    }
    svg.appendChild(bar);
    if (si === seriesNames.length - 1) {
      svg.appendChild(text(doc, margin.left + gi * groupW + 2,
                           margin.top + plotH + 14, d.label, 'chart-axis-label', 10));
    }
    svg.appendChild(text(doc, x, margin.top + plotH - h - 4,
                         formatValue(d.value), 'bar-value', 10));
  }

  if (seriesNames.length > 1 || data.some((d) => d.projected)) {
    let lx = margin.left;
    const ly = height - 8;
    const entries = seriesNames.length > 1
      ? seriesNames.map((s, i) => ({ name: s, color: SERIES_COLORS[i % SERIES_COLORS.length] }))
      : [{ name: 'history', color: BAR_COLOR }, { name: 'projected', color: PROJECTION_COLOR }];
    for (const e of entries) {
      svg.appendChild(el(doc, 'rect', {
        x: String(lx), y: String(ly - 9), width: '10', height: '10',
        fill: e.color, stroke: 'none', class: 'legend-swatch',
      }));
      const label = text(doc, lx + 14, ly, e.name, 'legend-label', 11);
      svg.appendChild(label);
      lx += 14 + 7 * e.name.length + 16;
    }
  }
  return svg;
}
