// Typed client for the rater-study HTTP API. All payloads are blinded:
// nothing here ever sees a true image-type name.

export interface QueryImage {
    label: string;
    url: string;
}

export interface NextQueryResponse {
    done: boolean;
    completed: number;
    total: number;
    query_id?: string;
    criterion_index?: number;
    criterion?: string;
    labels?: string[];
    images?: QueryImage[];
}

export interface SubmitAck {
    accepted: boolean;
    duplicate: boolean;
}

export class ConflictError extends Error {}

export class ApiError extends Error {
    constructor(message: string, public status: number) {
        super(message);
    }
}

export class SurveyApi {
    constructor(
        private baseUrl: string,
        public readonly studyId: string,
        public readonly raterId: string,
    ) {}

    private raterPath(suffix: string): string {
        return `${this.baseUrl}/studies/${encodeURIComponent(this.studyId)}` +
            `/raters/${encodeURIComponent(this.raterId)}${suffix}`;
    }

    imageUrl(relative: string): string {
        return `${this.baseUrl}${relative}`;
    }

    async nextQuery(): Promise<NextQueryResponse> {
        const resp = await fetch(this.raterPath("/next"));
        if (!resp.ok) {
            throw new ApiError(`next-query failed: ${resp.status}`, resp.status);
        }
        return (await resp.json()) as NextQueryResponse;
    }

    async submitRanking(
        queryId: string,
        criterionIndex: number,
        ranks: Record<string, number>,
    ): Promise<SubmitAck> {
        const resp = await fetch(this.raterPath("/rankings"), {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify({
                query_id: queryId,
                criterion_index: criterionIndex,
                ranks: ranks,
            }),
        });
        if (resp.status === 409) {
            throw new ConflictError("a different ranking is already stored");
        }
        if (!resp.ok) {
            throw new ApiError(`submit failed: ${resp.status}`, resp.status);
        }
        return (await resp.json()) as SubmitAck;
    }
}
