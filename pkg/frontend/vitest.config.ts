import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    // the conformance test drives a real server subprocess over loopback
    testTimeout: 120_000,
    hookTimeout: 30_000,
  },
});
