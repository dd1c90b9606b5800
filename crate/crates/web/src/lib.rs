//! WebAssembly bindings for the static demo page in `www/`.

pub mod demo;

use wasm_bindgen::prelude::*;

#[wasm_bindgen]
pub struct TrapGallery {
    inner: demo::Gallery,
}

#[wasm_bindgen]
impl TrapGallery {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.inner.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.inner.height
    }

    /// RGBA bytes for an `ImageData`.
    pub fn rgba(&self) -> Vec<u8> {
        self.inner.rgba.clone()
    }

    /// JSON `{"width", "height", "cells": [[class, artifact], ...]}`.
    pub fn labels(&self) -> String {
        serde_json::to_string(&self.inner).unwrap_or_default()
    }
}

#[wasm_bindgen(js_name = trapGallery)]
pub fn trap_gallery(rho: f64, artifact: &str, seed: u32, cols: usize, rows: usize, scale: usize) -> Result<TrapGallery, JsError> {
    demo::trap_gallery(rho, artifact, seed as u64, cols, rows, scale)
        .map(|inner| TrapGallery { inner })
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = promptHeatmap)]
pub fn prompt_heatmap(prompt_len: usize, dim: usize, seed: u32, weights: Vec<f64>) -> Result<Vec<f64>, JsError> {
    demo::prompt_heatmap(prompt_len, dim, seed as u64, &weights).map_err(|e| JsError::new(&e))
}

/// JSON-encoded [`demo::ClusterDemo`].
#[wasm_bindgen(js_name = clusterBlobs)]
pub fn cluster_blobs(groups: usize, per_group: usize, spread: f64, clusters: usize, seed: u32) -> Result<String, JsError> {
    let out = demo::cluster_blobs(groups, per_group, spread, clusters, seed as u64).map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&out).map_err(|e| JsError::new(&e.to_string()))
}
