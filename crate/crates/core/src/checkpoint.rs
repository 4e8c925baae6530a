//! Plain-text parameter container.
//!
//! ```text
//! rosa-checkpoint v1
//! encoder gcn
//! tensor encoder.w1 3 2
//! 0.1 -0.25
//! ...
//! end
//! ```
//!
//! After the two header lines, each `tensor <name> <rows> <cols>` line is
//! followed by `rows` lines of `cols` whitespace-separated values in row-major
//! order, printed in shortest round-trip form. Tensors appear in
//! [`Model::named_params`] order followed by the projector's running
//! statistics. Loading rebuilds the model from the shapes alone.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::encoder::{Encoder, EncoderKind, GcnParams, MlpParams, Model, ProjectorParams, SageLayer, SageParams};
use crate::error::{Result, RosaError};

pub const MAGIC: &str = "rosa-checkpoint v1";

pub fn to_text(model: &Model) -> String {
    let mut out = format!("{MAGIC}\nencoder {}\n", model.encoder.kind());
    let mut tensors = model.named_params();
    tensors.extend(model.projector.buffers());
    for (name, t) in tensors {
        out.push_str(&format!("tensor {name} {} {}\n", t.nrows(), t.ncols()));
        for row in t.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    out.push_str("end\n");
    out
}

fn bad(msg: impl Into<String>) -> RosaError {
    RosaError::Checkpoint(msg.into())
}

pub fn from_text(text: &str) -> Result<Model> {
    let mut lines = text.lines().enumerate();
    let mut next = |what: &str| lines.next().ok_or_else(|| bad(format!("unexpected end of file, expected {what}")));
    let (_, magic) = next("header")?;
    if magic.trim() != MAGIC {
        return Err(bad(format!("not a checkpoint (header `{magic}`)")));
    }
    let (_, enc) = next("encoder line")?;
    let kind: EncoderKind = enc
        .strip_prefix("encoder ")
        .ok_or_else(|| bad("missing encoder line"))?
        .trim()
        .parse()?;
    let mut tensors: Vec<(String, Array2<f64>)> = Vec::new();
    loop {
        let (no, line) = next("tensor or end")?;
        if line.trim() == "end" {
            break;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [tag, name, rows, cols] = parts[..] else {
            return Err(bad(format!("line {}: malformed tensor header", no + 1)));
        };
        if tag != "tensor" {
            return Err(bad(format!("line {}: expected `tensor`", no + 1)));
        }
        let parse_dim = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("line {}: bad dimension `{s}`", no + 1)));
        let (rows, cols) = (parse_dim(rows)?, parse_dim(cols)?);
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (rno, row) = next("tensor row")?;
            let before = values.len();
            for tok in row.split_whitespace() {
                values.push(tok.parse::<f64>().map_err(|_| bad(format!("line {}: bad value `{tok}`", rno + 1)))?);
            }
            if values.len() - before != cols {
                return Err(bad(format!("line {}: expected {cols} values", rno + 1)));
            }
        }
        let t = Array2::from_shape_vec((rows, cols), values).expect("counted");
        tensors.push((name.to_string(), t));
    }
    assemble(kind, tensors)
}

fn assemble(kind: EncoderKind, tensors: Vec<(String, Array2<f64>)>) -> Result<Model> {
    let mut it = tensors.into_iter();
    let mut take = |expect: &str| -> Result<Array2<f64>> {
        let (name, t) = it.next().ok_or_else(|| bad(format!("missing tensor {expect}")))?;
        if name != expect {
            return Err(bad(format!("expected tensor {expect}, found {name}")));
        }
        Ok(t)
    };
    let encoder = match kind {
        EncoderKind::Gcn => Encoder::Gcn(GcnParams {
            w1: take("encoder.w1")?,
            w2: take("encoder.w2")?,
        }),
        EncoderKind::Sage => {
            let mut layers = Vec::new();
            for i in 0..3 {
                layers.push(SageLayer {
                    w_msg: take(&format!("encoder.layer{i}.w_msg"))?,
                    w_self: take(&format!("encoder.layer{i}.w_self"))?,
                });
            }
            Encoder::Sage(SageParams { layers })
        }
        EncoderKind::Mlp => Encoder::Mlp(MlpParams {
            w1: take("encoder.w1")?,
            b1: take("encoder.b1")?,
            w2: take("encoder.w2")?,
            b2: take("encoder.b2")?,
        }),
    };
    let projector = ProjectorParams {
        w1: take("projector.w1")?,
        b1: take("projector.b1")?,
        bn_scale: take("projector.bn_scale")?,
        bn_shift: take("projector.bn_shift")?,
        w2: take("projector.w2")?,
        b2: take("projector.b2")?,
        running_mean: take("projector.running_mean")?,
        running_var: take("projector.running_var")?,
    };
    let model = Model { encoder, projector };
    check_shapes(&model)?;
    Ok(model)
}

fn check_shapes(m: &Model) -> Result<()> {
    let mismatch = |what: &str| Err(bad(format!("inconsistent shapes: {what}")));
    let h = m.encoder.output_dim();
    match &m.encoder {
        Encoder::Gcn(p) => {
            if p.w1.ncols() != p.w2.nrows() {
                return mismatch("encoder.w1 / encoder.w2");
            }
        }
        Encoder::Sage(p) => {
            for (i, l) in p.layers.iter().enumerate() {
                if l.w_msg.nrows() != l.w_self.nrows() || (i > 0 && l.w_msg.nrows() != h) {
                    return mismatch("sage layers");
                }
            }
        }
        Encoder::Mlp(p) => {
            if p.w1.ncols() != p.w2.nrows() || p.b1.dim() != (1, p.w1.ncols()) || p.b2.dim() != (1, p.w2.ncols()) {
                return mismatch("mlp layers");
            }
        }
    }
    let p = &m.projector;
    let o = p.w1.ncols();
    if p.w1.nrows() != h || p.w2.dim() != (o, o) {
        return mismatch("projector weights");
    }
    for t in [&p.b1, &p.bn_scale, &p.bn_shift, &p.b2, &p.running_mean, &p.running_var] {
        if t.dim() != (1, o) {
            return mismatch("projector vectors");
        }
    }
    Ok(())
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, to_text(model)).map_err(|e| RosaError::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let text = fs::read_to_string(path).map_err(|e| RosaError::io(path, e))?;
    from_text(&text)
}
