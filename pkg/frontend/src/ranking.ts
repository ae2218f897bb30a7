// Ranking state for one (query, criterion) pass. Raters assign ranks by
// picking images best-to-worst; the state machine guarantees that whatever
// reaches the server is a strict total order (a permutation of 1..k).

export class RankingState {
    private assigned = new Map<string, number>();

    constructor(public readonly labels: string[]) {
        if (new Set(labels).size !== labels.length) {
            throw new Error("duplicate blinded labels");
        }
    }

    get k(): number {
        return this.labels.length;
    }

    rankOf(label: string): number | null {
        return this.assigned.get(label) ?? null;
    }

    nextFreeRank(): number | null {
        for (let rank = 1; rank <= this.k; rank++) {
            if (![...this.assigned.values()].includes(rank)) {
                return rank;
            }
        }
        return null;
    }

    /** Toggle a label: unranked labels get the lowest free rank; ranked
     * labels are cleared and everything ranked after them moves up, so the
     * assignment always stays gap-free. */
    toggle(label: string): void {
        if (!this.labels.includes(label)) {
            throw new Error(`unknown label ${label}`);
        }
        const current = this.assigned.get(label);
        if (current === undefined) {
            const free = this.nextFreeRank();
            if (free !== null) {
                this.assigned.set(label, free);
            }
            return;
        }
        this.assigned.delete(label);
        for (const [other, rank] of this.assigned) {
            if (rank > current) {
                this.assigned.set(other, rank - 1);
            }
        }
    }

    reset(): void {
        this.assigned.clear();
    }

    isComplete(): boolean {
        if (this.assigned.size !== this.k) {
            return false;
        }
        const ranks = [...this.assigned.values()].sort((a, b) => a - b);
        return ranks.every((rank, i) => rank === i + 1);
    }

    /** Server payload; only valid once complete. */
    ranks(): Record<string, number> {
        if (!this.isComplete()) {
            throw new Error("ranking incomplete");
        }
        const out: Record<string, number> = {};
        for (const [label, rank] of this.assigned) {
            out[label] = rank;
        }
        return out;
    }
}
