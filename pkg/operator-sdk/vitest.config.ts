import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["test/**/*.test.ts"],
    // interop tests spawn the queue server and node manager and stream a
    // 10k-event corpus through a real worker process
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
