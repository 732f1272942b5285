/* tslint:disable */
/* eslint-disable */

/**
 * Text report of the discrete-adjoint dot-product test against central
 * differences, with the continuous-adjoint gap.
 */
export function burgers_check(n: number, steps: number, hidden: number, seed: bigint): string;

/**
 * Final profile of the standard Burgers problem on `n` points after `steps`
 * steps; the first half of the result is the initial profile, the second
 * half the final one.
 */
export function burgers_profile(n: number, steps: number, hidden: number, seed: bigint, scale: number): Float64Array;

/**
 * Trainable parameter count of the gated network.
 */
export function network_size(inputs: number, hidden: number, outputs: number): number;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly burgers_check: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
    readonly burgers_profile: (a: number, b: number, c: number, d: bigint, e: number) => [number, number, number, number];
    readonly network_size: (a: number, b: number, c: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
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
