/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_active_frames: (a: number) => number;
export const demo_epoch: (a: number) => number;
export const demo_frames: (a: number) => number;
export const demo_height: (a: number) => number;
export const demo_metrics: (a: number) => [number, number, number, number];
export const demo_new: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number];
export const demo_reconstruction_image: (a: number, b: number) => [number, number];
export const demo_step: (a: number, b: number) => [number, number, number];
export const demo_stiffness: (a: number) => [number, number];
export const demo_target_image: (a: number, b: number) => [number, number];
export const demo_total_epochs: (a: number) => number;
export const demo_width: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
