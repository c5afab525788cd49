/* tslint:disable */
/* eslint-disable */

/**
 * A scene together with a reconstruction in progress.
 */
export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    active_frames(): number;
    epoch(): number;
    frames(): number;
    height(): number;
    /**
     * Chamfer-L2, point-to-surface-L2 and depth error of the current reconstruction.
     */
    metrics(): Float64Array;
    /**
     * Generates a small scene from a preset and fits the texture to its first frame.
     * `ablation` is one of full, no-sil, no-reg-force, no-reg-energy, no-both.
     */
    constructor(preset: string, wind_strength: number, ablation: string, seed: bigint);
    /**
     * Current reconstruction of a frame rendered with the fitted texture, as RGBA bytes.
     */
    reconstruction_image(frame: number): Uint8Array;
    /**
     * Runs up to `count` reconstruction epochs and returns the last loss.
     */
    step(count: number): number;
    /**
     * Current log10 stretch, bend and shear stiffness, followed by the ground truth.
     */
    stiffness(): Float64Array;
    /**
     * Target image of a frame as RGBA bytes.
     */
    target_image(frame: number): Uint8Array;
    total_epochs(): number;
    width(): number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_active_frames: (a: number) => number;
    readonly demo_epoch: (a: number) => number;
    readonly demo_frames: (a: number) => number;
    readonly demo_height: (a: number) => number;
    readonly demo_metrics: (a: number) => [number, number, number, number];
    readonly demo_new: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number];
    readonly demo_reconstruction_image: (a: number, b: number) => [number, number];
    readonly demo_step: (a: number, b: number) => [number, number, number];
    readonly demo_stiffness: (a: number) => [number, number];
    readonly demo_target_image: (a: number, b: number) => [number, number];
    readonly demo_total_epochs: (a: number) => number;
    readonly demo_width: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
