/* tslint:disable */
/* eslint-disable */

/**
 * Learning rate sampled `steps_per_epoch` times per epoch over a stage.
 *
 * `kind` is `"warmup_cosine"` or `"warmup_step"`; `milestones` only
 * matters for the latter.
 */
export function lr_curve(kind: string, base_lr: number, warmup_start_lr: number, warmup_epochs: number, epochs: number, milestones: Uint32Array, steps_per_epoch: number): Float64Array;

/**
 * RGBA pixels (row-major, `height * width * 4` bytes) of one synthetic
 * identity. `sample` of `None` gives the clean prototype; otherwise the
 * `sample`-th noisy image of that identity in the generated dataset.
 */
export function render_identity(identity: number, modality: string, seed: bigint, sample: number | null | undefined, height: number, width: number): Uint8Array;

/**
 * CMC, AP and INP of a ranked gallery (identity labels, best match first)
 * as a JSON object. Returns `null` when the gallery has no positive.
 */
export function retrieval_metrics(ranked_ids: Uint32Array, query_id: number, max_rank: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly lr_curve: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number) => [number, number, number, number];
    readonly render_identity: (a: number, b: number, c: number, d: bigint, e: number, f: number, g: number) => [number, number, number, number];
    readonly retrieval_metrics: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
