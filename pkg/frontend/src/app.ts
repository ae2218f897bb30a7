// Single-page rater flow: fetch the next task from the server cursor, show
// the blinded variants, collect a full ranking, submit, advance. The server
// cursor is the only source of truth, so a refresh resumes where the rater
// left off.

import { ConflictError, NextQueryResponse, SurveyApi } from "./api.js";
import { RankingState } from "./ranking.js";

export class SurveyApp {
    private ranking: RankingState | null = null;
    private current: NextQueryResponse | null = null;
    private pendingSubmit: Record<string, number> | null = null;

    constructor(private root: HTMLElement, private api: SurveyApi) {}

    async start(): Promise<void> {
        await this.loadNext();
    }

    private async loadNext(): Promise<void> {
        let payload: NextQueryResponse;
        try {
            payload = await this.api.nextQuery();
        } catch (err) {
            this.renderError(`Could not reach the study server (${err}).`,
                () => this.loadNext());
            return;
        }
        this.current = payload;
        this.pendingSubmit = null;
        if (payload.done) {
            this.renderCompletion(payload);
            return;
        }
        this.ranking = new RankingState(payload.labels ?? []);
        this.renderQuery(payload);
    }

    private renderError(message: string, retry: () => void): void {
        this.root.innerHTML = "";
        const box = document.createElement("div");
        box.className = "error-box";
        const text = document.createElement("p");
        text.textContent = message;
        const button = document.createElement("button");
        button.className = "retry-button";
        button.textContent = "Retry";
        button.addEventListener("click", () => retry());
        box.append(text, button);
        this.root.append(box);
    }

    private renderCompletion(payload: NextQueryResponse): void {
        this.root.innerHTML = "";
        const done = document.createElement("div");
        done.className = "completion";
        const heading = document.createElement("h2");
        heading.textContent = "Study complete";
        const text = document.createElement("p");
        text.className = "completion-count";
        text.textContent =
            `You answered ${payload.completed} of ${payload.total} ranking tasks. Thank you!`;
        done.append(heading, text);
        this.root.append(done);
    }

    private renderQuery(payload: NextQueryResponse): void {
        this.root.innerHTML = "";
        const header = document.createElement("div");
        header.className = "query-header";
        const progress = document.createElement("span");
        progress.className = "progress";
        progress.textContent = `Task ${payload.completed + 1} / ${payload.total}`;
        const criterion = document.createElement("h2");
        criterion.className = "criterion";
        criterion.textContent = payload.criterion ?? "";
        const hint = document.createElement("p");
        hint.className = "hint";
        hint.textContent =
            "Select the images from best (1) to worst. Click or press Enter on an " +
            "image to give it the next rank; select it again to undo. " +
            "Double-click zooms.";
        header.append(progress, criterion, hint);

        const grid = document.createElement("div");
        grid.className = "image-grid";
        for (const image of payload.images ?? []) {
            grid.append(this.buildCard(image.label, image.url));
        }

        const controls = document.createElement("div");
        controls.className = "controls";
        const clear = document.createElement("button");
        clear.className = "clear-button";
        clear.textContent = "Clear ranking";
        clear.addEventListener("click", () => {
            this.ranking?.reset();
            this.refreshCards();
        });
        const submit = document.createElement("button");
        submit.className = "submit-button";
        submit.textContent = "Submit ranking";
        submit.disabled = true;
        submit.addEventListener("click", () => this.submit());
        controls.append(clear, submit);

        this.root.append(header, grid, controls);
        this.refreshCards();
    }

    private buildCard(label: string, url: string): HTMLElement {
        const card = document.createElement("figure");
        card.className = "image-card";
        card.dataset.label = label;
        card.tabIndex = 0; // keyboard-only ranking path
        card.setAttribute("role", "button");
        card.setAttribute("aria-label", `image ${label}`);

        const badge = document.createElement("span");
        badge.className = "rank-badge";
        const img = document.createElement("img");
        img.src = this.api.imageUrl(url);
        img.alt = `blinded variant ${label}`;
        img.addEventListener("error", () => {
            card.classList.add("load-failed");
            const retry = document.createElement("button");
            retry.className = "retry-image";
            retry.textContent = "Retry image";
            retry.addEventListener("click", (ev) => {
                ev.stopPropagation();
                card.classList.remove("load-failed");
                retry.remove();
                img.src = this.api.imageUrl(url);
            });
            card.append(retry);
        });
        const caption = document.createElement("figcaption");
        caption.textContent = label;

        card.addEventListener("click", () => this.toggle(label));
        card.addEventListener("keydown", (ev: KeyboardEvent) => {
            if (ev.key === "Enter" || ev.key === " ") {
                ev.preventDefault();
                this.toggle(label);
            }
        });
        card.addEventListener("dblclick", () => card.classList.toggle("zoomed"));

        card.append(badge, img, caption);
        return card;
    }

    private toggle(label: string): void {
        if (!this.ranking || this.pendingSubmit) {
            return;
        }
        this.ranking.toggle(label);
        this.refreshCards();
    }

    private refreshCards(): void {
        if (!this.ranking) {
            return;
        }
        for (const card of this.root.querySelectorAll<HTMLElement>(".image-card")) {
            const label = card.dataset.label ?? "";
            const rank = this.ranking.rankOf(label);
            const badge = card.querySelector<HTMLElement>(".rank-badge");
            if (badge) {
                badge.textContent = rank === null ? "" : String(rank);
            }
            card.classList.toggle("ranked", rank !== null);
        }
        const submit = this.root.querySelector<HTMLButtonElement>(".submit-button");
        if (submit) {
            submit.disabled = !this.ranking.isComplete();
        }
    }

    private async submit(): Promise<void> {
        if (!this.ranking || !this.current || !this.ranking.isComplete()) {
            return;
        }
        // freeze the payload so retries resend exactly the same ranking
        const payload = this.pendingSubmit ?? this.ranking.ranks();
        this.pendingSubmit = payload;
        const queryId = this.current.query_id!;
        const criterionIndex = this.current.criterion_index!;
        try {
            await this.api.submitRanking(queryId, criterionIndex, payload);
        } catch (err) {
            if (err instanceof ConflictError) {
                // someone else answered in this session's name; trust the server
                await this.loadNext();
                return;
            }
            this.renderError(`Submission failed (${err}). Your ranking was kept.`,
                () => this.retrySubmit());
            return;
        }
        await this.loadNext();
    }

    private async retrySubmit(): Promise<void> {
        if (!this.current || this.current.done) {
            await this.loadNext();
            return;
        }
        this.renderQuery(this.current);
        await this.submit();
    }
}
