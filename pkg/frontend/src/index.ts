export * from "./types.js";
export * from "./api.js";
export * from "./stream.js";
export * from "./live.js";
export * from "./render.js";
export * from "./controllers.js";
export * from "./annotations.js";
