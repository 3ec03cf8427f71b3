//! Text checkpoint holding everything needed to resume training bit-exactly.
//!
//! ```text
//! htt-checkpoint 1
//! scalar f64
//! epoch <finished epochs>
//! schedule epochs=<n> learning_rate=<x> halving_period=<n> batch_clips=<n> seed=<n>
//! config
//! <key = value lines of the model config>
//! end_config
//! adam_step <n>
//! param <name> <dim>x<dim>...
//! <values>
//! <first moments>
//! <second moments>
//! ...
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::config::{HttConfig, MODEL_KEYS};
use super::network::HttModel;
use super::train::{Schedule, Trainer};
use crate::autodiff::{AdamState, Scalar, Tensor};
use crate::error::{HttError, Result};
use crate::kv::KvMap;

pub const CHECKPOINT_MAGIC: &str = "htt-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

fn join<F: Scalar>(xs: &[F]) -> String {
    let mut s = String::with_capacity(xs.len() * 12);
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{x}");
    }
    s
}

pub fn checkpoint_to_string<F: Scalar>(t: &Trainer<F>) -> String {
    let s = &t.schedule;
    let mut out = String::new();
    let _ = writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}");
    let _ = writeln!(out, "scalar {}", F::NAME);
    let _ = writeln!(out, "epoch {}", t.next_epoch);
    let _ = writeln!(
        out,
        "schedule epochs={} learning_rate={} halving_period={} batch_clips={} seed={}",
        s.epochs, s.learning_rate, s.halving_period, s.batch_clips, s.seed
    );
    out.push_str("config\n");
    out.push_str(&t.model.cfg.to_kv());
    out.push_str("end_config\n");
    let _ = writeln!(out, "adam_step {}", t.adam.step_count());
    let store = &t.model.store;
    for (i, (name, tensor)) in store.names().iter().zip(store.tensors()).enumerate() {
        let dims: Vec<String> = tensor.shape().iter().map(|d| d.to_string()).collect();
        let _ = writeln!(out, "param {name} {}", dims.join("x"));
        let _ = writeln!(out, "{}", join(tensor.data()));
        let _ = writeln!(out, "{}", join(&t.adam.first_moments()[i]));
        let _ = writeln!(out, "{}", join(&t.adam.second_moments()[i]));
    }
    out
}

pub fn save_checkpoint<F: Scalar>(t: &Trainer<F>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| HttError::io(dir, e))?;
    }
    // Write-then-rename so an interrupted save keeps the previous checkpoint.
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, checkpoint_to_string(t)).map_err(|e| HttError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| HttError::io(path, e))
}

struct Reader<'a> {
    src: &'a str,
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl std::fmt::Display) -> HttError {
        HttError::Compat(format!("{}:{}: {msg}", self.src, self.line))
    }

    fn next(&mut self) -> Result<&'a str> {
        let (i, l) = self
            .lines
            .next()
            .ok_or_else(|| HttError::Compat(format!("{}: truncated checkpoint", self.src)))?;
        self.line = i + 1;
        Ok(l)
    }

    fn keyed(&mut self, key: &str) -> Result<&'a str> {
        let l = self.next()?;
        match l.split_once(' ') {
            Some((k, rest)) if k == key => Ok(rest.trim()),
            _ => Err(self.err(format!("expected `{key} ...`"))),
        }
    }

    fn values<F: Scalar>(&mut self, n: usize, what: &str) -> Result<Vec<F>> {
        let l = self.next()?;
        let v: Vec<F> = l
            .split_whitespace()
            .map(|x| x.parse::<F>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| self.err(format!("unparsable {what} value")))?;
        if v.len() != n {
            return Err(self.err(format!("{what}: expected {n} values, got {}", v.len())));
        }
        Ok(v)
    }
}

fn parse_schedule(text: &str, r: &Reader) -> Result<Schedule> {
    let mut s = Schedule::default();
    for part in text.split_whitespace() {
        let (k, v) = part.split_once('=').ok_or_else(|| r.err(format!("bad schedule entry `{part}`")))?;
        let bad = || r.err(format!("bad schedule value `{part}`"));
        match k {
            "epochs" => s.epochs = v.parse().map_err(|_| bad())?,
            "learning_rate" => s.learning_rate = v.parse().map_err(|_| bad())?,
            "halving_period" => s.halving_period = v.parse().map_err(|_| bad())?,
            "batch_clips" => s.batch_clips = v.parse().map_err(|_| bad())?,
            "seed" => s.seed = v.parse().map_err(|_| bad())?,
            _ => return Err(r.err(format!("unknown schedule key `{k}`"))),
        }
    }
    Ok(s)
}

/// Parses a checkpoint; every parameter name and shape must match the model
/// built from the embedded config.
pub fn checkpoint_from_str<F: Scalar>(text: &str, src: &str) -> Result<Trainer<F>> {
    let mut r = Reader {
        src,
        lines: text.lines().enumerate(),
        line: 0,
    };
    let head = r.next()?;
    if head != format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}") {
        return Err(r.err(format!("not a version {CHECKPOINT_VERSION} checkpoint")));
    }
    let scalar = r.keyed("scalar")?;
    if scalar != F::NAME {
        return Err(r.err(format!("checkpoint stores {scalar} parameters, expected {}", F::NAME)));
    }
    let epoch: usize = r.keyed("epoch")?.parse().map_err(|_| r.err("bad epoch"))?;
    let schedule = parse_schedule(r.keyed("schedule")?, &r)?;
    if r.next()? != "config" {
        return Err(r.err("expected `config`"));
    }
    let mut cfg_text = String::new();
    loop {
        let l = r.next()?;
        if l == "end_config" {
            break;
        }
        cfg_text.push_str(l);
        cfg_text.push('\n');
    }
    let kv = KvMap::parse(&cfg_text, &format!("{src} (config)"))?;
    kv.check_known(MODEL_KEYS)?;
    let cfg = HttConfig::from_kv(&kv)?;
    let step: u64 = r.keyed("adam_step")?.parse().map_err(|_| r.err("bad adam_step"))?;
    let mut model = HttModel::<F>::new(cfg, 0)?;
    let count = model.store.len();
    let mut first = Vec::with_capacity(count);
    let mut second = Vec::with_capacity(count);
    for id in model.store.ids().collect::<Vec<_>>() {
        let decl = r.keyed("param")?;
        let (name, dims) = decl.split_once(' ').ok_or_else(|| r.err("expected `param <name> <shape>`"))?;
        let expected = model.store.name(id).to_string();
        if name != expected {
            return Err(r.err(format!("found parameter `{name}` where `{expected}` was expected")));
        }
        let shape: Vec<usize> = dims
            .split('x')
            .map(|d| d.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| r.err(format!("bad shape `{dims}`")))?;
        let want = model.store.get(id).shape().to_vec();
        if shape != want {
            return Err(r.err(format!("parameter `{name}` has shape {shape:?}, config implies {want:?}")));
        }
        let n: usize = want.iter().product();
        let data = r.values::<F>(n, name)?;
        *model.store.get_mut(id) = Tensor::new(want, data)?.with_grad();
        first.push(r.values::<F>(n, name)?);
        second.push(r.values::<F>(n, name)?);
    }
    if let Some((i, l)) = r.lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(HttError::Compat(format!("{src}:{}: unexpected `{}`", i + 1, l.trim())));
    }
    let adam = AdamState::from_parts(schedule.learning_rate_at(epoch), step, first, second)?;
    schedule.validate()?;
    Ok(Trainer {
        model,
        adam,
        schedule,
        next_epoch: epoch,
    })
}

pub fn load_checkpoint<F: Scalar>(path: &Path) -> Result<Trainer<F>> {
    let text = fs::read_to_string(path).map_err(|e| HttError::io(path, e))?;
    checkpoint_from_str(&text, &path.display().to_string())
}
