//! Building blocks shared by the generator and discriminator.

use fewlabel_autodiff::{Float, Graph, Var};

use crate::error::Result;
use crate::models::params::{Init, Layout};
use crate::models::session::{ParamSpec, Session};

pub fn conv_specs(out: &mut Vec<ParamSpec>, prefix: &str, cin: usize, cout: usize, k: usize, bias: bool, spectral: bool) {
    out.push(ParamSpec::new(format!("{prefix}/kernel"), &[cout, cin, k, k], Layout::Conv, Init::Glorot, spectral));
    if bias {
        out.push(ParamSpec::new(format!("{prefix}/bias"), &[cout], Layout::Plain, Init::Zeros, false));
    }
}

pub fn linear_specs(out: &mut Vec<ParamSpec>, prefix: &str, din: usize, dout: usize, bias: bool, spectral: bool) {
    out.push(ParamSpec::new(format!("{prefix}/kernel"), &[din, dout], Layout::Plain, Init::Glorot, spectral));
    if bias {
        out.push(ParamSpec::new(format!("{prefix}/bias"), &[dout], Layout::Plain, Init::Zeros, false));
    }
}

/// Self-attention over spatial positions with pooled keys and values.
///
/// Query/key projections use `C/8` channels, values `C/2`; the attended
/// values are projected back to `C` and added with a learned scalar gain
/// that starts at zero.
pub fn non_local_specs(out: &mut Vec<ParamSpec>, prefix: &str, c: usize, spectral: bool) {
    conv_specs(out, &format!("{prefix}/conv2d_theta"), c, c / 8, 1, false, spectral);
    conv_specs(out, &format!("{prefix}/conv2d_phi"), c, c / 8, 1, false, spectral);
    conv_specs(out, &format!("{prefix}/conv2d_g"), c, c / 2, 1, false, spectral);
    out.push(ParamSpec::new(format!("{prefix}/sigma"), &[], Layout::Plain, Init::Zeros, false));
    conv_specs(out, &format!("{prefix}/conv2d_attn_g"), c / 2, c, 1, false, spectral);
}

pub fn non_local<F: Float>(s: &mut Session<F>, g: &mut Graph<F>, x: Var, prefix: &str) -> Var {
    let [n, c, h, w] = <[usize; 4]>::try_from(g.shape(x)).expect("non-local input must be NCHW");
    let hw = h * w;
    let theta = s.conv(g, x, &format!("{prefix}/conv2d_theta"));
    let theta = g.reshape(theta, &[n, c / 8, hw]);
    let phi = s.conv(g, x, &format!("{prefix}/conv2d_phi"));
    let phi = g.max_pool2x(phi);
    let phi = g.reshape(phi, &[n, c / 8, hw / 4]);
    // [N, HW, HW/4]
    let logits = g.matmul_t(theta, phi, true, false);
    let attn = g.softmax(logits);
    let gv = s.conv(g, x, &format!("{prefix}/conv2d_g"));
    let gv = g.max_pool2x(gv);
    let gv = g.reshape(gv, &[n, c / 2, hw / 4]);
    // [N, C/2, HW]
    let attn_g = g.matmul_t(gv, attn, false, true);
    let attn_g = g.reshape(attn_g, &[n, c / 2, h, w]);
    let o = s.conv(g, attn_g, &format!("{prefix}/conv2d_attn_g"));
    let sigma = s.param(g, &format!("{prefix}/sigma"));
    let o = g.mul_scalar_var(o, sigma);
    g.add(x, o)
}

/// Class-conditional batch normalization: standardize, then scale by
/// `1 + cond·W_γ` and shift by `cond·W_β`, per sample and channel.
pub fn conditional_batchnorm_specs(out: &mut Vec<ParamSpec>, prefix: &str, cond_dim: usize, c: usize) {
    for which in ["gamma", "beta"] {
        out.push(ParamSpec::new(format!("{prefix}/condition/{which}/kernel"), &[cond_dim, c], Layout::Plain, Init::Zeros, false));
    }
}

pub fn conditional_batchnorm<F: Float>(s: &mut Session<F>, g: &mut Graph<F>, h: Var, cond: Var, prefix: &str) -> Result<Var> {
    let xn = s.standardize(g, h, prefix)?;
    let wg = s.weight(g, &format!("{prefix}/condition/gamma/kernel"));
    let wb = s.weight(g, &format!("{prefix}/condition/beta/kernel"));
    let gamma = g.matmul(cond, wg);
    let gamma = g.add_scalar(gamma, F::one());
    let beta = g.matmul(cond, wb);
    Ok(g.scale_shift(xn, Some(gamma), Some(beta)))
}

pub fn batchnorm_specs(out: &mut Vec<ParamSpec>, prefix: &str, c: usize) {
    out.push(ParamSpec::new(format!("{prefix}/gamma"), &[c], Layout::Plain, Init::Ones, false));
    out.push(ParamSpec::new(format!("{prefix}/beta"), &[c], Layout::Plain, Init::Zeros, false));
}

pub fn batchnorm<F: Float>(s: &mut Session<F>, g: &mut Graph<F>, h: Var, prefix: &str) -> Result<Var> {
    let xn = s.standardize(g, h, prefix)?;
    let gamma = s.param(g, &format!("{prefix}/gamma"));
    let beta = s.param(g, &format!("{prefix}/beta"));
    Ok(g.scale_shift(xn, Some(gamma), Some(beta)))
}

/// `Σ_c y_c · ⟨repr, W[c]⟩` per row: `repr [N, d]`, `w [K, d]`, `y [N, K]`.
pub fn projection_term<F: Float>(g: &mut Graph<F>, repr: Var, w: Var, y: Var) -> Var {
    let emb = g.matmul(y, w);
    let prod = g.mul(emb, repr);
    g.sum_cols(prod)
}
