/**
 * Arm styling: baseline arms in blue, finite-difference arms (including the
 * body-fitted shell variants) in green, exact-derivative comparator arms in
 * orange; constant-weight arms draw squares, scheduled arms circles.
 * Defaults are overridable per figure spec.
 */

export type Marker = "square" | "circle";

export interface ArmStyle {
  color: string;
  marker: Marker;
}

export const COLORS = {
  off: "#1f77b4", // blue
  fd: "#2ca02c", // green
  ad: "#ff7f0e", // orange
};

export function defaultStyle(arm: string): ArmStyle {
  const name = arm.toLowerCase();
  let color = COLORS.off;
  if (name.startsWith("fd") || name.startsWith("shell")) {
    color = COLORS.fd;
  } else if (name.startsWith("ad")) {
    color = COLORS.ad;
  }
  const marker: Marker =
    name.includes("linear") || name.includes("scheduled") ? "circle" : "square";
  return { color, marker };
}

export type StyleMap = Record<string, Partial<ArmStyle>>;

export function styleFor(arm: string, overrides?: StyleMap): ArmStyle {
  const base = defaultStyle(arm);
  const extra = overrides?.[arm];
  return { ...base, ...extra };
}

/** Parse CLI style overrides: "arm=color:marker,arm2=color" */
export function parseStyleMap(text: string): StyleMap {
  const map: StyleMap = {};
  for (const item of text.split(",").filter((s) => s.length > 0)) {
    const [arm, spec] = item.split("=");
    if (!arm || !spec) {
      throw new Error(`bad style entry ${item}; expected arm=color[:marker]`);
    }
    const [color, marker] = spec.split(":");
    map[arm] = { color };
    if (marker) {
      if (marker !== "square" && marker !== "circle") {
        throw new Error(`unknown marker ${marker}`);
      }
      map[arm].marker = marker as Marker;
    }
  }
  return map;
}
