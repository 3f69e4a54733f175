/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const feasibility: (a: number, b: number) => [number, number];
export const gmc_slice: (a: number, b: number, c: bigint) => [number, number, number, number];
export const reduced_law: (a: number, b: number, c: bigint, d: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
