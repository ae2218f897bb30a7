import { SurveyApi } from "./api.js";
import { SurveyApp } from "./app.js";

function requireParam(params: URLSearchParams, name: string): string {
    const value = params.get(name);
    if (!value) {
        throw new Error(`missing ?${name}= query parameter`);
    }
    return value;
}

export function bootstrap(root: HTMLElement, search: string, baseUrl = ""): SurveyApp {
    const params = new URLSearchParams(search);
    const api = new SurveyApi(baseUrl, requireParam(params, "study"),
        requireParam(params, "rater"));
    const app = new SurveyApp(root, api);
    void app.start();
    return app;
}

declare global {
    interface Window {
        surveyApp?: SurveyApp;
    }
}

if (typeof document !== "undefined" && document.getElementById("app")) {
    window.surveyApp = bootstrap(document.getElementById("app")!, window.location.search);
}
