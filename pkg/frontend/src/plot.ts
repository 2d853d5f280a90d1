/**
 * Overlay scatter of observed targets and candidate predictions against one
 * chosen input variable. Pure string-building so it can be tested without a
 * document.
 */

export interface SeriesPoint {
  x: number;
  y: number;
}

export interface OverlaySpec {
  data: SeriesPoint[];
  prediction: SeriesPoint[];
  width?: number;
  height?: number;
  xLabel?: string;
}

const MARGIN = 28;

function finite(points: SeriesPoint[]): SeriesPoint[] {
  return points.filter((p) => Number.isFinite(p.x) && Number.isFinite(p.y));
}

export function overlaySvg(spec: OverlaySpec): string {
  const width = spec.width ?? 420;
  const height = spec.height ?? 240;
  const data = finite(spec.data);
  const pred = finite(spec.prediction);
  const all = [...data, ...pred];
  if (all.length === 0) {
    return `<svg width="${width}" height="${height}" role="img">` +
      `<text x="12" y="20">no finite points to plot</text></svg>`;
  }

  const xs = all.map((p) => p.x);
  const ys = all.map((p) => p.y);
  let [x0, x1] = [Math.min(...xs), Math.max(...xs)];
  let [y0, y1] = [Math.min(...ys), Math.max(...ys)];
  if (x0 === x1) [x0, x1] = [x0 - 1, x1 + 1];
  if (y0 === y1) [y0, y1] = [y0 - 1, y1 + 1];

  const sx = (x: number) =>
    MARGIN + ((x - x0) / (x1 - x0)) * (width - 2 * MARGIN);
  const sy = (y: number) =>
    height - MARGIN - ((y - y0) / (y1 - y0)) * (height - 2 * MARGIN);

  const circles = (points: SeriesPoint[], cls: string, r: number) =>
    points
      .map(
        (p) =>
          `<circle class="${cls}" cx="${sx(p.x).toFixed(1)}" ` +
          `cy="${sy(p.y).toFixed(1)}" r="${r}"/>`,
      )
      .join("");

  const label = spec.xLabel ?? "x";
  return (
    `<svg width="${width}" height="${height}" role="img" class="overlay">` +
    `<rect x="${MARGIN}" y="${MARGIN}" width="${width - 2 * MARGIN}" ` +
    `height="${height - 2 * MARGIN}" class="frame"/>` +
    circles(data, "observed", 3) +
    circles(pred, "predicted", 2) +
    `<text x="${width / 2}" y="${height - 6}" text-anchor="middle">` +
    `${label}</text>` +
    `</svg>`
  );
}
