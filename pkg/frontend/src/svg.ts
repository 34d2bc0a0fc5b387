// Minimal SVG plotting: density curves with interval bands, and point
// series with error bars. No external chart dependency.

const NS = "http://www.w3.org/2000/svg";

export interface Frame {
  width: number;
  height: number;
  margin: { top: number; right: number; bottom: number; left: number };
  xMin: number;
  xMax: number;
  yMin: number;
  yMax: number;
}

export function makeFrame(
  xs: number[],
  ys: number[],
  width = 640,
  height = 300,
): Frame {
  const xMin = Math.min(...xs);
  const xMax = Math.max(...xs);
  const yMax = Math.max(...ys, 1e-12);
  return {
    width,
    height,
    margin: { top: 12, right: 16, bottom: 42, left: 52 },
    xMin,
    xMax: xMax === xMin ? xMin + 1 : xMax,
    yMin: 0,
    yMax: yMax * 1.08,
  };
}

export function xPixel(frame: Frame, x: number): number {
  const inner = frame.width - frame.margin.left - frame.margin.right;
  return frame.margin.left + ((x - frame.xMin) / (frame.xMax - frame.xMin)) * inner;
}

export function yPixel(frame: Frame, y: number): number {
  const inner = frame.height - frame.margin.top - frame.margin.bottom;
  return frame.margin.top + inner - ((y - frame.yMin) / (frame.yMax - frame.yMin)) * inner;
}

function element<K extends keyof SVGElementTagNameMap>(
  tag: K,
  attrs: Record<string, string | number>,
): SVGElementTagNameMap[K] {
  const node = document.createElementNS(NS, tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, String(value));
  }
  return node;
}

export function svgRoot(frame: Frame): SVGSVGElement {
  const root = element("svg", {
    viewBox: `0 0 ${frame.width} ${frame.height}`,
    width: "100%",
    role: "img",
  });
  return root;
}

export function pathFor(frame: Frame, xs: number[], ys: number[]): string {
  return xs
    .map((x, i) => `${i === 0 ? "M" : "L"}${xPixel(frame, x).toFixed(2)},${yPixel(frame, ys[i] ?? 0).toFixed(2)}`)
    .join(" ");
}

export function drawCurve(
  root: SVGSVGElement,
  frame: Frame,
  xs: number[],
  ys: number[],
  color: string,
  dashed = false,
): void {
  const path = element("path", {
    d: pathFor(frame, xs, ys),
    fill: "none",
    stroke: color,
    "stroke-width": 1.8,
  });
  if (dashed) path.setAttribute("stroke-dasharray", "5 4");
  root.appendChild(path);
}

export function drawBand(
  root: SVGSVGElement,
  frame: Frame,
  xLow: number,
  xHigh: number,
  color: string,
  opacity: number,
): void {
  root.appendChild(
    element("rect", {
      x: xPixel(frame, xLow),
      y: frame.margin.top,
      width: Math.max(xPixel(frame, xHigh) - xPixel(frame, xLow), 0),
      height: frame.height - frame.margin.top - frame.margin.bottom,
      fill: color,
      opacity,
    }),
  );
}

export function drawMarker(
  root: SVGSVGElement,
  frame: Frame,
  x: number,
  color: string,
  label: string,
): void {
  const px = xPixel(frame, x);
  root.appendChild(
    element("line", {
      x1: px, x2: px,
      y1: frame.margin.top,
      y2: frame.height - frame.margin.bottom,
      stroke: color,
      "stroke-width": 1.2,
      "stroke-dasharray": "2 3",
    }),
  );
  const text = element("text", {
    x: px + 4, y: frame.margin.top + 12, fill: color, "font-size": 11,
  });
  text.textContent = label;
  root.appendChild(text);
}

export function drawPointsWithErrors(
  root: SVGSVGElement,
  frame: Frame,
  xs: number[],
  ys: number[],
  errors: number[],
  color: string,
  highlight = -1,
): void {
  drawCurve(root, frame, xs, ys, color);
  xs.forEach((x, i) => {
    const y = ys[i] ?? 0;
    const err = errors[i] ?? 0;
    root.appendChild(
      element("line", {
        x1: xPixel(frame, x), x2: xPixel(frame, x),
        y1: yPixel(frame, y - err), y2: yPixel(frame, y + err),
        stroke: color, "stroke-width": 1,
      }),
    );
    root.appendChild(
      element("circle", {
        cx: xPixel(frame, x), cy: yPixel(frame, y),
        r: i === highlight ? 5 : 3,
        fill: i === highlight ? "#b33" : color,
      }),
    );
  });
}

export function drawAxes(
  root: SVGSVGElement,
  frame: Frame,
  xTicks: { value: number; label: string }[],
  xLabel: string,
  secondary?: { value: number; label: string }[],
): void {
  const bottom = frame.height - frame.margin.bottom;
  root.appendChild(
    element("line", {
      x1: frame.margin.left, x2: frame.width - frame.margin.right,
      y1: bottom, y2: bottom, stroke: "#444",
    }),
  );
  for (const tick of xTicks) {
    const px = xPixel(frame, tick.value);
    root.appendChild(element("line", { x1: px, x2: px, y1: bottom, y2: bottom + 4, stroke: "#444" }));
    const text = element("text", { x: px, y: bottom + 16, "text-anchor": "middle", "font-size": 10, fill: "#333" });
    text.textContent = tick.label;
    root.appendChild(text);
  }
  if (secondary) {
    for (const tick of secondary) {
      const px = xPixel(frame, tick.value);
      const text = element("text", { x: px, y: bottom + 30, "text-anchor": "middle", "font-size": 10, fill: "#888" });
      text.textContent = tick.label;
      root.appendChild(text);
    }
  }
  const label = element("text", {
    x: (frame.margin.left + frame.width - frame.margin.right) / 2,
    y: frame.height - 2, "text-anchor": "middle", "font-size": 11, fill: "#333",
  });
  label.textContent = xLabel;
  root.appendChild(label);
}
