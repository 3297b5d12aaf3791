export * from "./api.js";
export * from "./session.js";
export { startApp } from "./app.js";
