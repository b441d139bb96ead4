/**
 * Occupancy of one synthetic object seen along each axis.
 */
export class VoxelView {
    static __wrap(ptr) {
        const obj = Object.create(VoxelView.prototype);
        obj.__wbg_ptr = ptr;
        VoxelViewFinalization.register(obj, obj.__wbg_ptr, obj);
        return obj;
    }
    __destroy_into_raw() {
        const ptr = this.__wbg_ptr;
        this.__wbg_ptr = 0;
        VoxelViewFinalization.unregister(this);
        return ptr;
    }
    free() {
        const ptr = this.__destroy_into_raw();
        wasm.__wbg_voxelview_free(ptr, 0);
    }
    /**
     * IoU against the comparison object.
     * @returns {number}
     */
    get iou() {
        const ret = wasm.voxelview_iou(this.__wbg_ptr);
        return ret;
    }
    /**
     * @returns {number}
     */
    get occupied() {
        const ret = wasm.voxelview_occupied(this.__wbg_ptr);
        return ret >>> 0;
    }
    /**
     * Row-major `GRID × GRID` counts of occupied cells along `axis`
     * (0 = x, 1 = y, 2 = z).
     * @param {number} axis
     * @returns {Uint32Array}
     */
    projection(axis) {
        const ret = wasm.voxelview_projection(this.__wbg_ptr, axis);
        var v1 = getArrayU32FromWasm0(ret[0], ret[1]).slice();
        wasm.__wbindgen_free(ret[0], ret[1] * 4, 4);
        return v1;
    }
}
if (Symbol.dispose) VoxelView.prototype[Symbol.dispose] = VoxelView.prototype.free;

export class WelchView {
    static __wrap(ptr) {
        const obj = Object.create(WelchView.prototype);
        obj.__wbg_ptr = ptr;
        WelchViewFinalization.register(obj, obj.__wbg_ptr, obj);
        return obj;
    }
    __destroy_into_raw() {
        const ptr = this.__wbg_ptr;
        this.__wbg_ptr = 0;
        WelchViewFinalization.unregister(this);
        return ptr;
    }
    free() {
        const ptr = this.__destroy_into_raw();
        wasm.__wbg_welchview_free(ptr, 0);
    }
    /**
     * @returns {number}
     */
    get dof() {
        const ret = wasm.__wbg_get_welchview_dof(this.__wbg_ptr);
        return ret;
    }
    /**
     * @returns {number}
     */
    get mean_a() {
        const ret = wasm.__wbg_get_welchview_mean_a(this.__wbg_ptr);
        return ret;
    }
    /**
     * @returns {number}
     */
    get mean_b() {
        const ret = wasm.__wbg_get_welchview_mean_b(this.__wbg_ptr);
        return ret;
    }
    /**
     * @returns {number}
     */
    get p() {
        const ret = wasm.__wbg_get_welchview_p(this.__wbg_ptr);
        return ret;
    }
    /**
     * @returns {number}
     */
    get std_a() {
        const ret = wasm.__wbg_get_welchview_std_a(this.__wbg_ptr);
        return ret;
    }
    /**
     * @returns {number}
     */
    get std_b() {
        const ret = wasm.__wbg_get_welchview_std_b(this.__wbg_ptr);
        return ret;
    }
    /**
     * @returns {number}
     */
    get t() {
        const ret = wasm.__wbg_get_welchview_t(this.__wbg_ptr);
        return ret;
    }
    /**
     * @param {number} arg0
     */
    set dof(arg0) {
        wasm.__wbg_set_welchview_dof(this.__wbg_ptr, arg0);
    }
    /**
     * @param {number} arg0
     */
    set mean_a(arg0) {
        wasm.__wbg_set_welchview_mean_a(this.__wbg_ptr, arg0);
    }
    /**
     * @param {number} arg0
     */
    set mean_b(arg0) {
        wasm.__wbg_set_welchview_mean_b(this.__wbg_ptr, arg0);
    }
    /**
     * @param {number} arg0
     */
    set p(arg0) {
        wasm.__wbg_set_welchview_p(this.__wbg_ptr, arg0);
    }
    /**
     * @param {number} arg0
     */
    set std_a(arg0) {
        wasm.__wbg_set_welchview_std_a(this.__wbg_ptr, arg0);
    }
    /**
     * @param {number} arg0
     */
    set std_b(arg0) {
        wasm.__wbg_set_welchview_std_b(this.__wbg_ptr, arg0);
    }
    /**
     * @param {number} arg0
     */
    set t(arg0) {
        wasm.__wbg_set_welchview_t(this.__wbg_ptr, arg0);
    }
}
if (Symbol.dispose) WelchView.prototype[Symbol.dispose] = WelchView.prototype.free;

/**
 * @param {number} shape_a
 * @param {number} parts_a
 * @param {number} shape_b
 * @param {number} parts_b
 * @param {number} seed
 * @param {number} threshold
 * @returns {VoxelView}
 */
export function explore_voxels(shape_a, parts_a, shape_b, parts_b, seed, threshold) {
    const ret = wasm.explore_voxels(shape_a, parts_a, shape_b, parts_b, seed, threshold);
    if (ret[2]) {
        throw takeFromExternrefTable0(ret[1]);
    }
    return VoxelView.__wrap(ret[0]);
}

/**
 * @returns {number}
 */
export function grid_size() {
    const ret = wasm.grid_size();
    return ret >>> 0;
}

/**
 * @param {number} smoothing
 * @param {number} points
 * @returns {Float64Array}
 */
export function loss_curve(smoothing, points) {
    const ret = wasm.loss_curve(smoothing, points);
    if (ret[3]) {
        throw takeFromExternrefTable0(ret[2]);
    }
    var v1 = getArrayF64FromWasm0(ret[0], ret[1]).slice();
    wasm.__wbindgen_free(ret[0], ret[1] * 8, 8);
    return v1;
}

/**
 * @param {number} base_lr
 * @param {number} warmup_steps
 * @param {number} total_steps
 * @param {number} points
 * @returns {Float64Array}
 */
export function lr_curve(base_lr, warmup_steps, total_steps, points) {
    const ret = wasm.lr_curve(base_lr, warmup_steps, total_steps, points);
    if (ret[3]) {
        throw takeFromExternrefTable0(ret[2]);
    }
    var v1 = getArrayF64FromWasm0(ret[0], ret[1]).slice();
    wasm.__wbindgen_free(ret[0], ret[1] * 8, 8);
    return v1;
}

/**
 * @returns {number}
 */
export function max_parts() {
    const ret = wasm.max_parts();
    return ret >>> 0;
}

/**
 * @returns {number}
 */
export function shape_count() {
    const ret = wasm.shape_count();
    return ret >>> 0;
}

/**
 * @param {string} a
 * @param {string} b
 * @returns {WelchView}
 */
export function welch_test(a, b) {
    const ptr0 = passStringToWasm0(a, wasm.__wbindgen_malloc, wasm.__wbindgen_realloc);
    const len0 = WASM_VECTOR_LEN;
    const ptr1 = passStringToWasm0(b, wasm.__wbindgen_malloc, wasm.__wbindgen_realloc);
    const len1 = WASM_VECTOR_LEN;
    const ret = wasm.welch_test(ptr0, len0, ptr1, len1);
    if (ret[2]) {
        throw takeFromExternrefTable0(ret[1]);
    }
    return WelchView.__wrap(ret[0]);
}
function __wbg_get_imports() {
    const import0 = {
        __proto__: null,
        __wbg_Error_30c8987f7c2ed4e2: function(arg0, arg1) {
            const ret = Error(getStringFromWasm0(arg0, arg1));
            return ret;
        },
        __wbg___wbindgen_throw_41e9ee4f547fc59a: function(arg0, arg1) {
            throw new Error(getStringFromWasm0(arg0, arg1));
        },
        __wbindgen_init_externref_table: function() {
            const table = wasm.__wbindgen_externrefs;
            const offset = table.grow(4);
            table.set(0, undefined);
            table.set(offset + 0, undefined);
            table.set(offset + 1, null);
            table.set(offset + 2, true);
            table.set(offset + 3, false);
        },
    };
    return {
        __proto__: null,
        "./vlg_web_bg.js": import0,
    };
}

const VoxelViewFinalization = (typeof FinalizationRegistry === 'undefined')
    ? { register: () => {}, unregister: () => {} }
    : new FinalizationRegistry(ptr => wasm.__wbg_voxelview_free(ptr, 1));
const WelchViewFinalization = (typeof FinalizationRegistry === 'undefined')
    ? { register: () => {}, unregister: () => {} }
    : new FinalizationRegistry(ptr => wasm.__wbg_welchview_free(ptr, 1));

function getArrayF64FromWasm0(ptr, len) {
    ptr = ptr >>> 0;
    return getFloat64ArrayMemory0().subarray(ptr / 8, ptr / 8 + len);
}

function getArrayU32FromWasm0(ptr, len) {
    ptr = ptr >>> 0;
    return getUint32ArrayMemory0().subarray(ptr / 4, ptr / 4 + len);
}

let cachedFloat64ArrayMemory0 = null;
function getFloat64ArrayMemory0() {
    if (cachedFloat64ArrayMemory0 === null || cachedFloat64ArrayMemory0.byteLength === 0) {
        cachedFloat64ArrayMemory0 = new Float64Array(wasm.memory.buffer);
    }
    return cachedFloat64ArrayMemory0;
}

function getStringFromWasm0(ptr, len) {
    return decodeText(ptr >>> 0, len);
}

let cachedUint32ArrayMemory0 = null;
function getUint32ArrayMemory0() {
    if (cachedUint32ArrayMemory0 === null || cachedUint32ArrayMemory0.byteLength === 0) {
        cachedUint32ArrayMemory0 = new Uint32Array(wasm.memory.buffer);
    }
    return cachedUint32ArrayMemory0;
}

let cachedUint8ArrayMemory0 = null;
function getUint8ArrayMemory0() {
    if (cachedUint8ArrayMemory0 === null || cachedUint8ArrayMemory0.byteLength === 0) {
        cachedUint8ArrayMemory0 = new Uint8Array(wasm.memory.buffer);
    }
    return cachedUint8ArrayMemory0;
}

function passStringToWasm0(arg, malloc, realloc) {
    if (realloc === undefined) {
        const buf = cachedTextEncoder.encode(arg);
        const ptr = malloc(buf.length, 1) >>> 0;
        getUint8ArrayMemory0().subarray(ptr, ptr + buf.length).set(buf);
        WASM_VECTOR_LEN = buf.length;
        return ptr;
    }

    let len = arg.length;
    let ptr = malloc(len, 1) >>> 0;

    const mem = getUint8ArrayMemory0();

    let offset = 0;

    for (; offset < len; offset++) {
        const code = arg.charCodeAt(offset);
        if (code > 0x7F) break;
        mem[ptr + offset] = code;
    }
    if (offset !== len) {
        if (offset !== 0) {
            arg = arg.slice(offset);
        }
        ptr = realloc(ptr, len, len = offset + arg.length * 3, 1) >>> 0;
        const view = getUint8ArrayMemory0().subarray(ptr + offset, ptr + len);
        const ret = cachedTextEncoder.encodeInto(arg, view);

        offset += ret.written;
        ptr = realloc(ptr, len, offset, 1) >>> 0;
    }

    WASM_VECTOR_LEN = offset;
    return ptr;
}

function takeFromExternrefTable0(idx) {
    const value = wasm.__wbindgen_externrefs.get(idx);
    wasm.__externref_table_dealloc(idx);
    return value;
}

let cachedTextDecoder = new TextDecoder('utf-8', { ignoreBOM: true, fatal: true });
cachedTextDecoder.decode();
const MAX_SAFARI_DECODE_BYTES = 2146435072;
let numBytesDecoded = 0;
function decodeText(ptr, len) {
    numBytesDecoded += len;
    if (numBytesDecoded >= MAX_SAFARI_DECODE_BYTES) {
        cachedTextDecoder = new TextDecoder('utf-8', { ignoreBOM: true, fatal: true });
        cachedTextDecoder.decode();
        numBytesDecoded = len;
    }
    return cachedTextDecoder.decode(getUint8ArrayMemory0().subarray(ptr, ptr + len));
}

const cachedTextEncoder = new TextEncoder();

if (!('encodeInto' in cachedTextEncoder)) {
    cachedTextEncoder.encodeInto = function (arg, view) {
        const buf = cachedTextEncoder.encode(arg);
        view.set(buf);
        return {
            read: arg.length,
            written: buf.length
        };
    };
}

let WASM_VECTOR_LEN = 0;

let wasmModule, wasmInstance, wasm;
function __wbg_finalize_init(instance, module) {
    wasmInstance = instance;
    wasm = instance.exports;
    wasmModule = module;
    cachedFloat64ArrayMemory0 = null;
    cachedUint32ArrayMemory0 = null;
    cachedUint8ArrayMemory0 = null;
    wasm.__wbindgen_start();
    return wasm;
}

async function __wbg_load(module, imports) {
    if (typeof Response === 'function' && module instanceof Response) {
        if (!module.ok) {
            throw new Error(`failed to fetch Wasm: ${module.status} ${module.statusText} fetching '${module.url}'`);
        }

        if (typeof WebAssembly.instantiateStreaming === 'function') {
            try {
                return await WebAssembly.instantiateStreaming(module, imports);
            } catch (e) {
                const validResponse = expectedResponseType(module.type);

                if (validResponse && module.headers.get('Content-Type') !== 'application/wasm') {
                    console.warn("`WebAssembly.instantiateStreaming` failed because your server does not serve Wasm with `application/wasm` MIME type. Falling back to `WebAssembly.instantiate` which is slower. Original error:\n", e);

                } else { throw e; }
            }
        }

        const bytes = await module.arrayBuffer();
        return await WebAssembly.instantiate(bytes, imports);
    } else {
        const instance = await WebAssembly.instantiate(module, imports);

        if (instance instanceof WebAssembly.Instance) {
            return { instance, module };
        } else {
            return instance;
        }
    }

    function expectedResponseType(type) {
        switch (type) {
            case 'basic': case 'cors': case 'default': return true;
        }
        return false;
    }
}

function initSync(module) {
    if (wasm !== undefined) return wasm;


    if (module !== undefined) {
        if (Object.getPrototypeOf(module) === Object.prototype) {
            ({module} = module)
        } else {
            console.warn('using deprecated parameters for `initSync()`; pass a single object instead')
        }
    }

    const imports = __wbg_get_imports();
    if (!(module instanceof WebAssembly.Module)) {
        module = new WebAssembly.Module(module);
    }
    const instance = new WebAssembly.Instance(module, imports);
    return __wbg_finalize_init(instance, module);
}

async function __wbg_init(module_or_path) {
    if (wasm !== undefined) return wasm;


    if (module_or_path !== undefined) {
        if (Object.getPrototypeOf(module_or_path) === Object.prototype) {
            ({module_or_path} = module_or_path)
        } else {
            console.warn('using deprecated parameters for the initialization function; pass a single object instead')
        }
    }

    if (module_or_path === undefined) {
        module_or_path = new URL('vlg_web_bg.wasm', import.meta.url);
    }
    const imports = __wbg_get_imports();

    if (typeof module_or_path === 'string' || (typeof Request === 'function' && module_or_path instanceof Request) || (typeof URL === 'function' && module_or_path instanceof URL)) {
        module_or_path = fetch(module_or_path);
    }

    const { instance, module } = await __wbg_load(await module_or_path, imports);

    return __wbg_finalize_init(instance, module);
}

export { initSync, __wbg_init as default };
