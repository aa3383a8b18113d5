export * from "./protocol";
export * from "./clock";
export * from "./geometry";
export * from "./render";
export * from "./settings";
export * from "./client";
export * from "./panel";
export * from "./headless";
