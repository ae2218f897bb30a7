import { defineConfig } from "vitest/config";

export default defineConfig({
    test: {
        environment: "happy-dom",
        globals: true,
        testTimeout: 90_000,
        hookTimeout: 90_000,
    },
});
