//! Training run configuration: model keys, schedule keys and paths in one
//! `key = value` file.

use std::path::{Path, PathBuf};

use htt_core::kv::KvMap;
use htt_core::model::{HttConfig, Schedule, MODEL_KEYS};
use htt_core::{HttError, Result};

pub const RUN_KEYS: [&str; 8] = [
    "train_manifest",
    "output_dir",
    "seed",
    "init_seed",
    "epochs",
    "learning_rate",
    "halving_period",
    "batch_clips",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: HttConfig,
    pub schedule: Schedule,
    pub init_seed: u64,
    pub train_manifest: PathBuf,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Relative paths resolve against the directory holding the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HttError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, &path.display().to_string(), base)
    }

    pub fn parse(text: &str, source: &str, base: &Path) -> Result<Self> {
        let kv = KvMap::parse(text, source)?;
        let known: Vec<&str> = MODEL_KEYS.iter().chain(RUN_KEYS.iter()).copied().collect();
        kv.check_known(&known)?;
        let model = HttConfig::from_kv(&kv)?;
        model.validate()?;
        let d = Schedule::default();
        let seed: u64 = kv.require("seed")?;
        let schedule = Schedule {
            epochs: kv.get_or("epochs", d.epochs)?,
            learning_rate: kv.get_or("learning_rate", d.learning_rate)?,
            halving_period: kv.get_or("halving_period", d.halving_period)?,
            batch_clips: kv.get_or("batch_clips", d.batch_clips)?,
            seed,
        };
        schedule.validate()?;
        let manifest: String = kv.require("train_manifest")?;
        let train_manifest = base.join(manifest);
        if !train_manifest.is_file() {
            return Err(HttError::Config(format!(
                "{source}: field `train_manifest`: {} does not exist",
                train_manifest.display()
            )));
        }
        Ok(RunConfig {
            model,
            schedule,
            init_seed: kv.get_or("init_seed", seed)?,
            train_manifest,
            output_dir: kv.get::<String>("output_dir")?.map(|p| base.join(p)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dir_with_manifest() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("d.manifest"), "htt-manifest 1\n").unwrap();
        dir
    }

    #[test]
    fn parses_keys_and_defaults() {
        let dir = dir_with_manifest();
        let rc = RunConfig::parse(
            "train_manifest = d.manifest\nseed = 4\nepochs = 3\ntoken_dim = 32\nclip_length = 64\nsegment_length = 8\n",
            "run.cfg",
            dir.path(),
        )
        .unwrap();
        assert_eq!(rc.schedule.epochs, 3);
        assert_eq!(rc.schedule.learning_rate, 3e-5);
        assert_eq!(rc.schedule.halving_period, 15);
        assert_eq!(rc.init_seed, 4);
        assert_eq!(rc.model.token_dim, 32);
        assert_eq!(rc.output_dir, None);
    }

    #[test]
    fn errors_name_the_field() {
        let dir = dir_with_manifest();
        let e = RunConfig::parse("train_manifest = d.manifest\n", "run.cfg", dir.path()).unwrap_err();
        assert!(e.to_string().contains("seed"), "{e}");
        let e = RunConfig::parse("train_manifest = d.manifest\nseed = 1\nepochs = many\n", "run.cfg", dir.path()).unwrap_err();
        assert!(e.to_string().contains("epochs"), "{e}");
        let e = RunConfig::parse("train_manifest = nope.manifest\nseed = 1\n", "run.cfg", dir.path()).unwrap_err();
        assert!(e.to_string().contains("train_manifest"), "{e}");
        let e = RunConfig::parse("train_manifest = d.manifest\nseed = 1\nlr = 1\n", "run.cfg", dir.path()).unwrap_err();
        assert!(e.to_string().contains("lr"), "{e}");
    }
}
