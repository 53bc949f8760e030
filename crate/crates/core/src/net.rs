//! Conditional velocity network with exact reverse-mode gradients.
//!
//! The backbone is a residual conv net: a stem 3x3 conv over the noisy
//! residual concatenated with the conditioning field, `n_blocks` residual
//! blocks, and a zero-initialized 3x3 head, so a freshly initialized net
//! predicts velocity identically zero. The timestep enters through a
//! sinusoidal embedding mapped per block to a per-channel scale and shift.
//! Convolutions pad circularly in longitude and clamp rows in latitude.
//! All arithmetic is f64 so analytic gradients can be verified against
//! central finite differences; parameters serialize as f32.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Field;
use crate::rng::{domain, substream};
use rand::Rng;

/// Architecture descriptor; `channels` is the field channel count C, the
/// stem consumes 2C (noisy residual + conditioning).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetDescriptor {
    pub channels: usize,
    pub width: usize,
    pub n_blocks: usize,
    pub kernel: usize,
    pub embed_dim: usize,
}

impl NetDescriptor {
    /// Desk-scale default: width 32, 4 blocks, 3x3 kernels.
    pub fn desk_default(channels: usize) -> NetDescriptor {
        NetDescriptor {
            channels,
            width: 32,
            n_blocks: 4,
            kernel: 3,
            embed_dim: 16,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.width == 0 {
            return Err(Error::validation("channels and width must be positive"));
        }
        if self.kernel != 3 {
            return Err(Error::validation("only 3x3 kernels are supported"));
        }
        if self.embed_dim < 2 || self.embed_dim % 2 != 0 {
            return Err(Error::validation("embed_dim must be even and at least 2"));
        }
        Ok(())
    }
}

/// Offset table into the flat parameter vector.
#[derive(Debug, Clone)]
struct Layout {
    entries: Vec<(String, usize, usize)>,
    total: usize,
}

fn build_layout(desc: &NetDescriptor) -> Layout {
    let (c, w, e) = (desc.channels, desc.width, desc.embed_dim);
    let mut entries = Vec::new();
    let mut off = 0usize;
    let mut push = |name: String, len: usize, off: &mut usize| {
        entries.push((name, *off, len));
        *off += len;
    };
    push("stem.w".into(), w * 2 * c * 9, &mut off);
    push("stem.b".into(), w, &mut off);
    for b in 0..desc.n_blocks {
        push(format!("block{b}.film.w"), 2 * w * e, &mut off);
        push(format!("block{b}.film.b"), 2 * w, &mut off);
        push(format!("block{b}.conv1.w"), w * w * 9, &mut off);
        push(format!("block{b}.conv1.b"), w, &mut off);
        push(format!("block{b}.conv2.w"), w * w * 9, &mut off);
        push(format!("block{b}.conv2.b"), w, &mut off);
    }
    push("head.w".into(), c * w * 9, &mut off);
    push("head.b".into(), c, &mut off);
    Layout {
        entries,
        total: off,
    }
}

/// Gradients of every parameter, flat in the same layout as the net.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    flat: Vec<f64>,
}

impl ParamGrads {
    pub fn as_slice(&self) -> &[f64] {
        &self.flat
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub(crate) fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.flat.iter_mut().zip(&other.flat) {
            *a += *b;
        }
    }

    pub(crate) fn scale(&mut self, by: f64) {
        for a in &mut self.flat {
            *a *= by;
        }
    }
}

struct BlockTape {
    h_in: Vec<f64>,
    scale: Vec<f64>,
    modulated: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
}

/// Primal values recorded by one forward pass, sufficient for an exact
/// reverse sweep. Tied to the parameter revision that produced it.
pub struct Tape {
    revision: u64,
    h: usize,
    w: usize,
    input: Vec<f64>,
    blocks: Vec<BlockTape>,
    h_final: Vec<f64>,
    embed: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct VelocityNet {
    desc: NetDescriptor,
    layout: Layout,
    params: Vec<f64>,
    revision: u64,
}

/// dst[x] += w * src[(x + shift) mod n], shift in {-1, 0, 1}.
#[inline]
fn axpy_shift(dst: &mut [f64], src: &[f64], shift: i32, w: f64) {
    let n = dst.len();
    match shift {
        0 => {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
        -1 => {
            dst[0] += w * src[n - 1];
            for i in 1..n {
                dst[i] += w * src[i - 1];
            }
        }
        1 => {
            for i in 0..n - 1 {
                dst[i] += w * src[i + 1];
            }
            dst[n - 1] += w * src[0];
        }
        _ => unreachable!("3x3 kernels only"),
    }
}

/// sum_x a[x] * b[(x + shift) mod n], shift in {-1, 0, 1}.
#[inline]
fn dot_shift(a: &[f64], b: &[f64], shift: i32) -> f64 {
    let n = a.len();
    let mut acc = 0.0;
    match shift {
        0 => {
            for (x, y) in a.iter().zip(b) {
                acc += x * y;
            }
        }
        -1 => {
            acc += a[0] * b[n - 1];
            for i in 1..n {
                acc += a[i] * b[i - 1];
            }
        }
        1 => {
            for i in 0..n - 1 {
                acc += a[i] * b[i + 1];
            }
            acc += a[n - 1] * b[0];
        }
        _ => unreachable!("3x3 kernels only"),
    }
    acc
}

#[inline]
fn clamp_row(y: i64, h: usize) -> usize {
    y.clamp(0, h as i64 - 1) as usize
}

/// out[co] = bias[co] + sum_ci conv3x3(inp[ci]); rows clamp, columns wrap.
fn conv3x3(
    out: &mut [f64],
    inp: &[f64],
    wts: &[f64],
    bias: &[f64],
    c_out: usize,
    c_in: usize,
    h: usize,
    w: usize,
) {
    for co in 0..c_out {
        let och = &mut out[co * h * w..(co + 1) * h * w];
        och.fill(bias[co]);
        for ci in 0..c_in {
            let ich = &inp[ci * h * w..(ci + 1) * h * w];
            let wbase = (co * c_in + ci) * 9;
            for y in 0..h {
                for dy in 0..3usize {
                    let ys = clamp_row(y as i64 + dy as i64 - 1, h);
                    let src = &ich[ys * w..(ys + 1) * w];
                    for dx in 0..3usize {
                        let weight = wts[wbase + dy * 3 + dx];
                        axpy_shift(
                            &mut och[y * w..(y + 1) * w],
                            src,
                            dx as i32 - 1,
                            weight,
                        );
                    }
                }
            }
        }
    }
}

/// Gradient w.r.t. the conv input: scatter-add of the upstream through the
/// transposed stencil (clamped rows receive multiple contributions).
fn conv3x3_input_grad(
    gin: &mut [f64],
    gout: &[f64],
    wts: &[f64],
    c_out: usize,
    c_in: usize,
    h: usize,
    w: usize,
) {
    for ci in 0..c_in {
        let gich = &mut gin[ci * h * w..(ci + 1) * h * w];
        for co in 0..c_out {
            let goch = &gout[co * h * w..(co + 1) * h * w];
            let wbase = (co * c_in + ci) * 9;
            for y in 0..h {
                let grow = &goch[y * w..(y + 1) * w];
                for dy in 0..3usize {
                    let ys = clamp_row(y as i64 + dy as i64 - 1, h);
                    for dx in 0..3usize {
                        let weight = wts[wbase + dy * 3 + dx];
                        axpy_shift(
                            &mut gich[ys * w..(ys + 1) * w],
                            grow,
                            -(dx as i32 - 1),
                            weight,
                        );
                    }
                }
            }
        }
    }
}

/// Accumulates conv weight gradients; bias gradients are plain channel
/// sums of the upstream and are handled by the caller.
fn conv3x3_weight_grad(
    gw: &mut [f64],
    inp: &[f64],
    gout: &[f64],
    c_out: usize,
    c_in: usize,
    h: usize,
    w: usize,
) {
    for co in 0..c_out {
        let goch = &gout[co * h * w..(co + 1) * h * w];
        for ci in 0..c_in {
            let ich = &inp[ci * h * w..(ci + 1) * h * w];
            let wbase = (co * c_in + ci) * 9;
            for y in 0..h {
                let grow = &goch[y * w..(y + 1) * w];
                for dy in 0..3usize {
                    let ys = clamp_row(y as i64 + dy as i64 - 1, h);
                    let src = &ich[ys * w..(ys + 1) * w];
                    for dx in 0..3usize {
                        gw[wbase + dy * 3 + dx] += dot_shift(grow, src, dx as i32 - 1);
                    }
                }
            }
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn silu_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Sinusoidal embedding of the flow timestep with geometric frequencies
/// spanning 1 to 1000.
fn embed_timestep(tau: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut e = Vec::with_capacity(dim);
    for i in 0..half {
        let f = if half > 1 {
            10f64.powf(3.0 * i as f64 / (half as f64 - 1.0))
        } else {
            1.0
        };
        e.push((tau * f).sin());
    }
    for i in 0..half {
        let f = if half > 1 {
            10f64.powf(3.0 * i as f64 / (half as f64 - 1.0))
        } else {
            1.0
        };
        e.push((tau * f).cos());
    }
    e
}

impl VelocityNet {
    /// Fan-in scaled uniform init; the head stays zero so the untrained
    /// net outputs zero velocity.
    pub fn new(desc: NetDescriptor, seed: u64) -> Result<VelocityNet> {
        let mut net = VelocityNet::zeroed(desc)?;
        let layout = net.layout.entries.clone();
        let mut rng = substream(seed, &[domain::NET_INIT]);
        for (name, off, len) in &layout {
            if name.ends_with(".b") || name.starts_with("head.") {
                continue;
            }
            let fan_in = if name == "stem.w" {
                2 * net.desc.channels * 9
            } else if name.contains("film") {
                net.desc.embed_dim
            } else {
                net.desc.width * 9
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut net.params[*off..*off + *len] {
                *p = rng.random_range(-bound..bound);
            }
        }
        net.revision = 1;
        Ok(net)
    }

    pub fn zeroed(desc: NetDescriptor) -> Result<VelocityNet> {
        desc.validate()?;
        let layout = build_layout(&desc);
        let params = vec![0.0; layout.total];
        Ok(VelocityNet {
            desc,
            layout,
            params,
            revision: 0,
        })
    }

    pub fn descriptor(&self) -> &NetDescriptor {
        &self.desc
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    /// Named parameter ranges in the flat vector, for reporting and tests.
    pub fn param_ranges(&self) -> Vec<(String, std::ops::Range<usize>)> {
        self.layout
            .entries
            .iter()
            .map(|(n, off, len)| (n.clone(), *off..*off + *len))
            .collect()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.params.len() {
            return Err(Error::validation(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                flat.len()
            )));
        }
        if flat.iter().any(|p| !p.is_finite()) {
            return Err(Error::numerical("non-finite parameter value"));
        }
        self.params.copy_from_slice(flat);
        self.revision += 1;
        Ok(())
    }

    /// Mutable access for the optimizer; invalidates existing tapes.
    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        self.revision += 1;
        &mut self.params
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn zero_grads(&self) -> ParamGrads {
        ParamGrads {
            flat: vec![0.0; self.layout.total],
        }
    }

    fn slice(&self, name: &str) -> &[f64] {
        let (_, off, len) = self
            .layout
            .entries
            .iter()
            .find(|(n, _, _)| n == name)
            .expect("layout entry");
        &self.params[*off..*off + *len]
    }

    fn grad_slice<'a>(&self, grads: &'a mut ParamGrads, name: &str) -> &'a mut [f64] {
        let (_, off, len) = self
            .layout
            .entries
            .iter()
            .find(|(n, _, _)| n == name)
            .expect("layout entry");
        &mut grads.flat[*off..*off + *len]
    }

    /// Core forward pass on raw channel-major f64 buffers. This is the
    /// full-precision interface behind `forward`; use it when f32 field
    /// storage would mask the arithmetic, e.g. gradient verification.
    pub fn forward_raw(
        &self,
        noisy: &[f64],
        cond: &[f64],
        h: usize,
        w: usize,
        tau: f64,
    ) -> (Vec<f64>, Tape) {
        let (c, wd) = (self.desc.channels, self.desc.width);
        debug_assert_eq!(noisy.len(), c * h * w);
        debug_assert_eq!(cond.len(), c * h * w);
        let mut input = Vec::with_capacity(2 * c * h * w);
        input.extend_from_slice(noisy);
        input.extend_from_slice(cond);

        let mut hbuf = vec![0.0; wd * h * w];
        conv3x3(
            &mut hbuf,
            &input,
            self.slice("stem.w"),
            self.slice("stem.b"),
            wd,
            2 * c,
            h,
            w,
        );
        let embed = embed_timestep(tau, self.desc.embed_dim);

        let mut blocks = Vec::with_capacity(self.desc.n_blocks);
        for b in 0..self.desc.n_blocks {
            let film_w = self.slice(&format!("block{b}.film.w"));
            let film_b = self.slice(&format!("block{b}.film.b"));
            let e = self.desc.embed_dim;
            let mut scale = vec![0.0; wd];
            let mut shift = vec![0.0; wd];
            for o in 0..wd {
                let mut s = film_b[o];
                let mut t = film_b[wd + o];
                for i in 0..e {
                    s += film_w[o * e + i] * embed[i];
                    t += film_w[(wd + o) * e + i] * embed[i];
                }
                scale[o] = s;
                shift[o] = t;
            }
            let h_in = hbuf.clone();
            let mut modulated = vec![0.0; wd * h * w];
            for ch in 0..wd {
                let g = 1.0 + scale[ch];
                let t = shift[ch];
                let src = &h_in[ch * h * w..(ch + 1) * h * w];
                let dst = &mut modulated[ch * h * w..(ch + 1) * h * w];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = g * s + t;
                }
            }
            let mut z1 = vec![0.0; wd * h * w];
            conv3x3(
                &mut z1,
                &modulated,
                self.slice(&format!("block{b}.conv1.w")),
                self.slice(&format!("block{b}.conv1.b")),
                wd,
                wd,
                h,
                w,
            );
            let a1: Vec<f64> = z1.iter().map(|x| silu(*x)).collect();
            let mut z2 = vec![0.0; wd * h * w];
            conv3x3(
                &mut z2,
                &a1,
                self.slice(&format!("block{b}.conv2.w")),
                self.slice(&format!("block{b}.conv2.b")),
                wd,
                wd,
                h,
                w,
            );
            for (hv, z) in hbuf.iter_mut().zip(&z2) {
                *hv += *z;
            }
            blocks.push(BlockTape {
                h_in,
                scale,
                modulated,
                z1,
                a1,
            });
        }

        let mut out = vec![0.0; c * h * w];
        conv3x3(
            &mut out,
            &hbuf,
            self.slice("head.w"),
            self.slice("head.b"),
            c,
            wd,
            h,
            w,
        );
        let tape = Tape {
            revision: self.revision,
            h,
            w,
            input,
            blocks,
            h_final: hbuf,
            embed,
        };
        (out, tape)
    }

    /// Reverse sweep over a recorded tape; `upstream` is dL/d(output).
    /// Full-precision counterpart of `backward`.
    pub fn backward_raw(&self, tape: &Tape, upstream: &[f64]) -> Result<ParamGrads> {
        if tape.revision != self.revision {
            return Err(Error::validation(
                "stale tape: parameters changed since the forward pass",
            ));
        }
        let (c, wd) = (self.desc.channels, self.desc.width);
        let (h, w) = (tape.h, tape.w);
        if upstream.len() != c * h * w {
            return Err(Error::validation("upstream gradient has wrong shape"));
        }
        let mut grads = self.zero_grads();

        let mut gh = vec![0.0; wd * h * w];
        {
            let head_w = self.slice("head.w").to_vec();
            conv3x3_weight_grad(
                self.grad_slice(&mut grads, "head.w"),
                &tape.h_final,
                upstream,
                c,
                wd,
                h,
                w,
            );
            let gb = self.grad_slice(&mut grads, "head.b");
            for co in 0..c {
                for row in upstream[co * h * w..(co + 1) * h * w].chunks_exact(w) {
                    gb[co] += row.iter().sum::<f64>();
                }
            }
            conv3x3_input_grad(&mut gh, upstream, &head_w, c, wd, h, w);
        }

        for b in (0..self.desc.n_blocks).rev() {
            let bt = &tape.blocks[b];
            // h_out = h_in + conv2(silu(conv1(modulate(h_in)))): the skip
            // passes gh through unchanged, the branch adds its share.
            let gz2 = &gh;
            let mut ga1 = vec![0.0; wd * h * w];
            {
                let conv2_w = self.slice(&format!("block{b}.conv2.w")).to_vec();
                conv3x3_weight_grad(
                    self.grad_slice(&mut grads, &format!("block{b}.conv2.w")),
                    &bt.a1,
                    gz2,
                    wd,
                    wd,
                    h,
                    w,
                );
                let gb = self.grad_slice(&mut grads, &format!("block{b}.conv2.b"));
                for co in 0..wd {
                    for row in gz2[co * h * w..(co + 1) * h * w].chunks_exact(w) {
                        gb[co] += row.iter().sum::<f64>();
                    }
                }
                conv3x3_input_grad(&mut ga1, gz2, &conv2_w, wd, wd, h, w);
            }
            let gz1: Vec<f64> = ga1
                .iter()
                .zip(&bt.z1)
                .map(|(g, z)| g * silu_prime(*z))
                .collect();
            let mut gm = vec![0.0; wd * h * w];
            {
                let conv1_w = self.slice(&format!("block{b}.conv1.w")).to_vec();
                conv3x3_weight_grad(
                    self.grad_slice(&mut grads, &format!("block{b}.conv1.w")),
                    &bt.modulated,
                    &gz1,
                    wd,
                    wd,
                    h,
                    w,
                );
                let gb = self.grad_slice(&mut grads, &format!("block{b}.conv1.b"));
                for co in 0..wd {
                    for row in gz1[co * h * w..(co + 1) * h * w].chunks_exact(w) {
                        gb[co] += row.iter().sum::<f64>();
                    }
                }
                conv3x3_input_grad(&mut gm, &gz1, &conv1_w, wd, wd, h, w);
            }
            // modulated = (1 + scale[ch]) * h_in + shift[ch].
            let mut gscale = vec![0.0; wd];
            let mut gshift = vec![0.0; wd];
            for ch in 0..wd {
                let gm_ch = &gm[ch * h * w..(ch + 1) * h * w];
                let hin_ch = &bt.h_in[ch * h * w..(ch + 1) * h * w];
                let mut gs = 0.0;
                let mut gt = 0.0;
                for (g, x) in gm_ch.iter().zip(hin_ch) {
                    gs += g * x;
                    gt += g;
                }
                gscale[ch] = gs;
                gshift[ch] = gt;
            }
            {
                let e = self.desc.embed_dim;
                let gw = self.grad_slice(&mut grads, &format!("block{b}.film.w"));
                for o in 0..wd {
                    for i in 0..e {
                        gw[o * e + i] += gscale[o] * tape.embed[i];
                        gw[(wd + o) * e + i] += gshift[o] * tape.embed[i];
                    }
                }
                let gb = self.grad_slice(&mut grads, &format!("block{b}.film.b"));
                for o in 0..wd {
                    gb[o] += gscale[o];
                    gb[wd + o] += gshift[o];
                }
            }
            for ch in 0..wd {
                let g = 1.0 + bt.scale[ch];
                let gm_ch = &gm[ch * h * w..(ch + 1) * h * w];
                let gh_ch = &mut gh[ch * h * w..(ch + 1) * h * w];
                for (hv, m) in gh_ch.iter_mut().zip(gm_ch) {
                    *hv += g * m;
                }
            }
        }

        {
            let gb = self.grad_slice(&mut grads, "stem.b");
            for co in 0..wd {
                for row in gh[co * h * w..(co + 1) * h * w].chunks_exact(w) {
                    gb[co] += row.iter().sum::<f64>();
                }
            }
            conv3x3_weight_grad(
                self.grad_slice(&mut grads, "stem.w"),
                &tape.input,
                &gh,
                wd,
                2 * c,
                h,
                w,
            );
        }
        Ok(grads)
    }

    fn check_fields(&self, noisy: &Field, cond: &Field, tau: f64) -> Result<()> {
        if !noisy.same_shape(cond) {
            return Err(Error::validation(
                "noisy residual and conditioning must share grid and catalog",
            ));
        }
        if noisy.channels().len() != self.desc.channels {
            return Err(Error::validation(format!(
                "net expects {} channels, fields have {}",
                self.desc.channels,
                noisy.channels().len()
            )));
        }
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::validation(format!("tau {tau} outside [0, 1]")));
        }
        Ok(())
    }

    /// Predicted velocity for a noisy residual given its conditioning.
    pub fn forward(&self, noisy: &Field, cond: &Field, tau: f64) -> Result<(Field, Tape)> {
        self.check_fields(noisy, cond, tau)?;
        let grid = noisy.grid();
        let (h, w) = (grid.n_lat(), grid.n_lon());
        let nb: Vec<f64> = noisy.data().iter().map(|v| *v as f64).collect();
        let cb: Vec<f64> = cond.data().iter().map(|v| *v as f64).collect();
        let (out, tape) = self.forward_raw(&nb, &cb, h, w, tau);
        let data: Vec<f32> = out.iter().map(|v| *v as f32).collect();
        let f = Field::from_data(grid.clone(), noisy.channels().clone(), data, None)?;
        Ok((f, tape))
    }

    /// Parameter gradients for upstream dL/d(output) given as a field.
    pub fn backward(&self, tape: &Tape, upstream: &Field) -> Result<ParamGrads> {
        let up: Vec<f64> = upstream.data().iter().map(|v| *v as f64).collect();
        self.backward_raw(tape, &up)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{ChannelCatalog, ChannelDef, GridSpec};
    use std::sync::Arc;

    fn small_desc(channels: usize) -> NetDescriptor {
        NetDescriptor {
            channels,
            width: 8,
            n_blocks: 2,
            kernel: 3,
            embed_dim: 8,
        }
    }

    fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = substream(seed, &[0xfeed]);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_initialized_head_gives_zero_velocity() {
        let net = VelocityNet::new(small_desc(2), 3).unwrap();
        let (h, w) = (6, 8);
        let noisy = rand_vec(2 * h * w, 1);
        let cond = rand_vec(2 * h * w, 2);
        let (out, _) = net.forward_raw(&noisy, &cond, h, w, 0.3);
        assert!(out.iter().all(|v| *v == 0.0));

        let zeroed = VelocityNet::zeroed(small_desc(2)).unwrap();
        let (out, _) = zeroed.forward_raw(&noisy, &cond, h, w, 0.3);
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let mut net = VelocityNet::new(small_desc(2), 3).unwrap();
        // Break the zero head so the output is nontrivial.
        let ranges = net.param_ranges();
        let (_, head) = ranges
            .iter()
            .find(|(n, _)| n == "head.w")
            .map(|(n, r)| (n.clone(), r.clone()))
            .unwrap();
        let mut p = net.params().to_vec();
        for (i, v) in rand_vec(head.len(), 9).iter().enumerate() {
            p[head.start + i] = 0.1 * v;
        }
        net.set_params(&p).unwrap();
        let (h, w) = (6, 8);
        let noisy = rand_vec(2 * h * w, 1);
        let cond = rand_vec(2 * h * w, 2);
        let (a, _) = net.forward_raw(&noisy, &cond, h, w, 0.3);
        let (b, _) = net.forward_raw(&noisy, &cond, h, w, 0.3);
        assert_eq!(a, b);
        assert!(a.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn fuzz_forward_stays_finite() {
        let mut net = VelocityNet::new(small_desc(1), 5).unwrap();
        let p = rand_vec(net.param_count(), 11)
            .iter()
            .map(|v| 0.3 * v)
            .collect::<Vec<_>>();
        net.set_params(&p).unwrap();
        let (h, w) = (8, 8);
        for trial in 0..1000u64 {
            let noisy = rand_vec(h * w, 1000 + trial);
            let cond = rand_vec(h * w, 5000 + trial);
            let tau = (trial as f64 / 999.0).clamp(0.0, 1.0);
            let (out, _) = net.forward_raw(&noisy, &cond, h, w, tau);
            assert!(out.iter().all(|v| v.is_finite()), "trial {trial}");
        }
    }

    #[test]
    fn longitude_shift_equivariance_is_exact() {
        let mut net = VelocityNet::new(small_desc(2), 7).unwrap();
        let p = rand_vec(net.param_count(), 13)
            .iter()
            .map(|v| 0.2 * v)
            .collect::<Vec<_>>();
        net.set_params(&p).unwrap();
        let (h, w) = (6, 12);
        let noisy = rand_vec(2 * h * w, 21);
        let cond = rand_vec(2 * h * w, 22);
        let shift = 5usize;
        let rot = |buf: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; buf.len()];
            for c in 0..2 {
                for y in 0..h {
                    for x in 0..w {
                        out[(c * h + y) * w + (x + shift) % w] = buf[(c * h + y) * w + x];
                    }
                }
            }
            out
        };
        let (base, _) = net.forward_raw(&noisy, &cond, h, w, 0.4);
        let (shifted, _) = net.forward_raw(&rot(&noisy), &rot(&cond), h, w, 0.4);
        assert_eq!(rot(&base), shifted);
    }

    /// Central finite differences of a fixed linear functional of the
    /// output against the analytic reverse-mode gradients.
    fn finite_difference_check(seed: u64, channels: usize) {
        let mut net = VelocityNet::new(small_desc(channels), seed).unwrap();
        let p: Vec<f64> = rand_vec(net.param_count(), seed ^ 0xaa)
            .iter()
            .map(|v| 0.3 * v)
            .collect();
        net.set_params(&p).unwrap();
        let (h, w) = (8, 8);
        let noisy = rand_vec(channels * h * w, seed ^ 0x1);
        let cond = rand_vec(channels * h * w, seed ^ 0x2);
        let proj = rand_vec(channels * h * w, seed ^ 0x3);
        let tau = 0.37;

        let loss = |net: &VelocityNet| -> f64 {
            let (out, _) = net.forward_raw(&noisy, &cond, h, w, tau);
            out.iter().zip(&proj).map(|(o, p)| o * p).sum()
        };
        let (_, tape) = net.forward_raw(&noisy, &cond, h, w, tau);
        let grads = net.backward_raw(&tape, &proj).unwrap();

        let eps = 1e-4;
        let mut worst = 0.0f64;
        for i in 0..net.param_count() {
            let mut pp = p.clone();
            pp[i] += eps;
            net.set_params(&pp).unwrap();
            let up = loss(&net);
            pp[i] -= 2.0 * eps;
            net.set_params(&pp).unwrap();
            let down = loss(&net);
            let fd = (up - down) / (2.0 * eps);
            let g = grads.as_slice()[i];
            let rel = (g - fd).abs() / (g.abs() + 1e-8);
            if rel > worst {
                worst = rel;
            }
            assert!(
                rel < 1e-4,
                "param {i}: analytic {g}, fd {fd}, rel {rel}"
            );
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn gradients_match_finite_differences_net1() {
        finite_difference_check(101, 1);
    }

    #[test]
    fn gradients_match_finite_differences_net2() {
        finite_difference_check(202, 2);
    }

    #[test]
    fn gradients_match_finite_differences_net3() {
        finite_difference_check(303, 1);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let net = VelocityNet::new(small_desc(1), 17).unwrap();
        let (h, w) = (4, 8);
        let noisy = rand_vec(h * w, 1);
        let cond = rand_vec(h * w, 2);
        let (_, tape) = net.forward_raw(&noisy, &cond, h, w, 0.5);
        let grads = net.backward_raw(&tape, &vec![0.0; h * w]).unwrap();
        assert!(grads.as_slice().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn upstream_scaling_scales_head_grads_linearly() {
        let net = VelocityNet::new(small_desc(1), 19).unwrap();
        let (h, w) = (4, 8);
        let noisy = rand_vec(h * w, 3);
        let cond = rand_vec(h * w, 4);
        let (_, tape) = net.forward_raw(&noisy, &cond, h, w, 0.5);
        let up = rand_vec(h * w, 5);
        let up3: Vec<f64> = up.iter().map(|v| 3.0 * v).collect();
        let g1 = net.backward_raw(&tape, &up).unwrap();
        let g3 = net.backward_raw(&tape, &up3).unwrap();
        for (a, b) in g1.as_slice().iter().zip(g3.as_slice()) {
            assert!((3.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn stale_tape_is_rejected() {
        let mut net = VelocityNet::new(small_desc(1), 23).unwrap();
        let (h, w) = (4, 8);
        let noisy = rand_vec(h * w, 3);
        let cond = rand_vec(h * w, 4);
        let (_, tape) = net.forward_raw(&noisy, &cond, h, w, 0.5);
        let p = net.params().to_vec();
        net.set_params(&p).unwrap();
        let err = net.backward_raw(&tape, &vec![0.0; h * w]).unwrap_err();
        assert!(err.to_string().contains("stale"));
    }

    #[test]
    fn field_interface_validates_shapes() {
        let net = VelocityNet::new(small_desc(2), 29).unwrap();
        let g = GridSpec::global(4, 8).unwrap();
        let cat2 = ChannelCatalog::new(vec![
            ChannelDef::surface("t2m"),
            ChannelDef::surface("u10"),
        ])
        .unwrap();
        let cat1: Arc<ChannelCatalog> =
            ChannelCatalog::new(vec![ChannelDef::surface("t2m")]).unwrap();
        let f2 = Field::zeros(g.clone(), cat2.clone());
        let f1 = Field::zeros(g.clone(), cat1);
        assert!(net.forward(&f2, &f1, 0.5).is_err());
        assert!(net.forward(&f2, &f2, 1.5).is_err());
        let (out, tape) = net.forward(&f2, &f2, 0.5).unwrap();
        assert_eq!(out.data().len(), 2 * g.n_cells());
        let grads = net.backward(&tape, &out).unwrap();
        assert_eq!(grads.len(), net.param_count());
    }

    #[test]
    fn parameter_count_matches_layout_arithmetic() {
        let desc = small_desc(2);
        let net = VelocityNet::zeroed(desc.clone()).unwrap();
        let (c, w, e, b) = (desc.channels, desc.width, desc.embed_dim, desc.n_blocks);
        let stem = w * 2 * c * 9 + w;
        let block = (2 * w * e + 2 * w) + 2 * (w * w * 9 + w);
        let head = c * w * 9 + c;
        assert_eq!(net.param_count(), stem + b * block + head);
        let total: usize = net.param_ranges().iter().map(|(_, r)| r.len()).sum();
        assert_eq!(total, net.param_count());
    }
}
