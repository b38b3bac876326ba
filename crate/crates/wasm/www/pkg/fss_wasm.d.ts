/* tslint:disable */
/* eslint-disable */

/**
 * Names of the built-in fixtures, comma separated.
 */
export function fixture_names(): string;

/**
 * Labels along the camera ray through `(x, y)`, `n` points over
 * `z ∈ [-1, 1]`, flattened as `[z, binary, camera, omni]`.
 */
export function label_profile(fixture_name: string, x: number, y: number, delta: number, n: number): Float32Array;

/**
 * `resolution²` RGBA bytes, rows top to bottom. `mode` is `normals`
 * (front view, normals mapped to colors) or `thickness` (grayscale,
 * scaled by the maximum).
 */
export function render_image(fixture_name: string, mode: string, resolution: number): Uint8Array;

/**
 * One sample set, flattened as `[x, y, z, label, kind]` per point; `kind`
 * is the point kind code.
 */
export function sample_scatter(fixture_name: string, scheme: string, budget: number, seed: bigint): Float32Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly fixture_names: () => [number, number];
    readonly label_profile: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly render_image: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly sample_scatter: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
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
