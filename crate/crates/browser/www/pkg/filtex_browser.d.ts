/* tslint:disable */
/* eslint-disable */

/**
 * One Brownian path with its reversal compensators, all on the grid up to
 * `t_max`.
 */
export class ReversalPaths {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Limit compensator.
     */
    readonly a: Float64Array;
    /**
     * Compensator along the dyadic subdivision.
     */
    readonly a_n: Float64Array;
    readonly b: Float64Array;
    /**
     * `B - A`.
     */
    readonly m: Float64Array;
    readonly sup_error: number;
    readonly t: Float64Array;
}

export function ouDensity(t: number, x: number, inner_samples: number, as_printed: boolean, seed: number, ys: Float64Array): Float64Array;

export function phiCurve(seed: number, paths: number, lags: Float64Array): Float64Array;

export function reversalPaths(seed: number, level: number, t_max: number): ReversalPaths;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_reversalpaths_free: (a: number, b: number) => void;
    readonly ouDensity: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly phiCurve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly reversalPaths: (a: number, b: number, c: number) => [number, number, number];
    readonly reversalpaths_a: (a: number) => [number, number];
    readonly reversalpaths_a_n: (a: number) => [number, number];
    readonly reversalpaths_b: (a: number) => [number, number];
    readonly reversalpaths_m: (a: number) => [number, number];
    readonly reversalpaths_sup_error: (a: number) => number;
    readonly reversalpaths_t: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
