import { writeFileSync } from "fs";
import * as echarts from "echarts";
import { buildOption, FigureSpec } from "./figures.js";

/** zrender's process-global instance and class counters leak into the CSS
 *  class names; renumbering them by first appearance keeps repeated
 *  renders byte-identical. */
function canonicalizeClasses(svg: string): string {
  const ids = new Map<string, number>();
  return svg
    .replace(/zr\d+-/g, "zr-")
    .replace(/zr-cls-(\d+)/g, (_tok, id: string) => {
      if (!ids.has(id)) {
        ids.set(id, ids.size);
      }
      return `zr-cls-${ids.get(id)}`;
    });
}

/** Render the figure option server-side to an SVG string (no DOM). */
export function renderSvg(spec: FigureSpec): string {
  const chart = echarts.init(null, null, {
    renderer: "svg",
    ssr: true,
    width: spec.width,
    height: spec.height,
  });
  try {
    chart.setOption(buildOption(spec));
    return canonicalizeClasses(chart.renderToSVGString());
  } finally {
    chart.dispose();
  }
}

/** Build and write the figure; the output file is written only after the
 *  inputs parsed and rendered cleanly. */
export function renderToFile(spec: FigureSpec): string {
  const svg = renderSvg(spec);
  if (svg.length === 0) {
    throw new Error("renderer produced an empty document");
  }
  writeFileSync(spec.output, svg, "utf8");
  return spec.output;
}
