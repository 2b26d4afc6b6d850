/* tslint:disable */
/* eslint-disable */

export function gapComparison(phi_h_ev: number, gap_h_nm: number, sigma_ratio: number, phi_ratio: number): string;

export function liaDemo(reference_hz: number, lpf_hz: number, a0: number, a1: number, duration_s: number, points: number): string;

export function tuningRegion(n_omega_c: number, n_ki: number, min_bandwidth_hz: number, max_inf_norm_db: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly gapComparison: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly liaDemo: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly tuningRegion: (a: number, b: number, c: number, d: number) => [number, number, number, number];
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
