export * from "./api.js";
export * from "./drawing.js";
export * from "./binding.js";
export * from "./comparison.js";
