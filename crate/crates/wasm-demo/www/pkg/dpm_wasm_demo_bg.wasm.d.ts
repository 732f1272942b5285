/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const burgers_check: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
export const burgers_profile: (a: number, b: number, c: number, d: bigint, e: number) => [number, number, number, number];
export const network_size: (a: number, b: number, c: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
