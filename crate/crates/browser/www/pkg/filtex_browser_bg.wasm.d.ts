/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_reversalpaths_free: (a: number, b: number) => void;
export const ouDensity: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
export const phiCurve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const reversalPaths: (a: number, b: number, c: number) => [number, number, number];
export const reversalpaths_a: (a: number) => [number, number];
export const reversalpaths_a_n: (a: number) => [number, number];
export const reversalpaths_b: (a: number) => [number, number];
export const reversalpaths_m: (a: number) => [number, number];
export const reversalpaths_sup_error: (a: number) => number;
export const reversalpaths_t: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
