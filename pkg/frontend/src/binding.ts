/** Bind API payloads to chart-ready structures without reshaping values. */

import type { CurvePayload, HourlyPayload, SeverityPayload } from "./api.js";

export interface ChartPoint {
  day: number;
  mean: number;
  ciLow: number;
  ciHigh: number;
}

export interface ChartSeries {
  name: string;
  points: ChartPoint[];
}

/** Curve payload -> series; values are passed through untouched. */
export function bindCurve(payload: CurvePayload): ChartSeries {
  const n = payload.days.length;
  if (
    payload.mean.length !== n ||
    payload.ci_low.length !== n ||
    payload.ci_high.length !== n
  ) {
    throw new Error("curve payload arrays disagree in length");
  }
  const points: ChartPoint[] = [];
  for (let i = 0; i < n; i++) {
    points.push({
      day: payload.days[i],
      mean: payload.mean[i],
      ciLow: payload.ci_low[i],
      ciHigh: payload.ci_high[i],
    });
  }
  return { name: payload.name, points };
}

/** Flatten the series back to payload-shaped arrays (used to verify fidelity). */
export function seriesValues(series: ChartSeries): {
  days: number[];
  mean: number[];
  ci_low: number[];
  ci_high: number[];
} {
  return {
    days: series.points.map((p) => p.day),
    mean: series.points.map((p) => p.mean),
    ci_low: series.points.map((p) => p.ciLow),
    ci_high: series.points.map((p) => p.ciHigh),
  };
}

export interface MapFeature {
  cell: string;
  count: number;
  ring: [number, number][];
  color: string;
}

export function bindSeverity(payload: SeverityPayload): MapFeature[] {
  return payload.clusters.map((c) => ({
    cell: c.cell,
    count: c.count,
    ring: c.polygon,
    color: c.color,
  }));
}

export interface HourBar {
  hour: number;
  percent: number;
}

export function bindHourly(payload: HourlyPayload): HourBar[] {
  if (payload.no_data) {
    return [];
  }
  return payload.bins.map((percent, hour) => ({ hour, percent }));
}
