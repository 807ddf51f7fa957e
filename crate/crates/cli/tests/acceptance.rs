//! Acceptance suite. Runs every criterion, prints one line each and exits
//! nonzero when a hard criterion fails. The ablation ordering check is soft:
//! it is reported but never fails the run.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use tempfile::TempDir;

use keytailor::dit::{Ablations, KeyTailorModel, LatentBundle, ModelConfig};
use keytailor::numerics::{SeededRng, Tensor};

const BIN: &str = env!("CARGO_BIN_EXE_keytailor");
const FULL_STEPS: &str = "200";
const FULL_LR: &str = "1e-4";

type Check = Result<String, String>;

fn run(args: &[&str]) -> Result<String, String> {
    let out = Command::new(BIN)
        .args(args)
        .output()
        .map_err(|e| format!("cannot run keytailor: {e}"))?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!(
            "`keytailor {}` exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Value of a `key<TAB>value` line.
fn field(text: &str, key: &str) -> Result<String, String> {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}\t")))
        .map(str::to_string)
        .ok_or_else(|| format!("no {key} line"))
}

fn mean_ssim(run_dir: &Path) -> Result<f64, String> {
    let text = fs::read_to_string(run_dir.join("infer/metrics.tsv")).map_err(|e| e.to_string())?;
    let line = text
        .lines()
        .find(|l| l.starts_with("mean\t"))
        .ok_or("metrics has no mean line")?;
    let fields: Vec<&str> = line.split('\t').collect();
    let at = fields
        .iter()
        .position(|f| *f == "ssim")
        .ok_or("no ssim column")?;
    fields[at + 1].parse().map_err(|e| format!("{e}"))
}

/// Relative paths of every file below `root` with one of `exts`, sorted.
fn files_with(root: &Path, exts: &[&str]) -> Vec<PathBuf> {
    fn walk(dir: &Path, root: &Path, exts: &[&str], out: &mut Vec<PathBuf>) {
        let Ok(entries) = fs::read_dir(dir) else {
            return;
        };
        for e in entries.flatten() {
            let path = e.path();
            if path.is_dir() {
                walk(&path, root, exts, out);
            } else if path
                .extension()
                .and_then(|x| x.to_str())
                .is_some_and(|x| exts.contains(&x))
            {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, exts, &mut out);
    out.sort();
    out
}

/// Every matching file exists in both trees with identical bytes.
fn same_files(a: &Path, b: &Path, exts: &[&str]) -> Result<usize, String> {
    let (fa, fb) = (files_with(a, exts), files_with(b, exts));
    ensure(!fa.is_empty() && fa == fb, || {
        format!("file sets differ under {} and {}", a.display(), b.display())
    })?;
    for f in &fa {
        let same = fs::read(a.join(f)).ok() == fs::read(b.join(f)).ok();
        ensure(same, || format!("{} differs between reruns", f.display()))?;
    }
    Ok(fa.len())
}

struct Workspace {
    dir: TempDir,
    sample: PathBuf,
    full: Option<Result<(PathBuf, f64), String>>,
}

impl Workspace {
    fn new() -> Result<Self, String> {
        let dir = TempDir::new().map_err(|e| e.to_string())?;
        let corpus = dir.path().join("corpus");
        run(&[
            "gen-synthetic",
            "--seeds",
            "1",
            "--frames",
            "16",
            "--size",
            "64",
            "--out",
            p(&corpus),
        ])?;
        Ok(Workspace {
            sample: corpus.join("sample_0001"),
            dir,
            full: None,
        })
    }

    fn train(&self, name: &str, extra: &[&str]) -> Result<PathBuf, String> {
        let out = self.dir.path().join(name);
        let mut args = vec![
            "train",
            "--sample",
            p(&self.sample),
            "--steps",
            FULL_STEPS,
            "--lr",
            FULL_LR,
            "--out",
            p(&out),
            "--infer-after",
        ];
        args.extend_from_slice(extra);
        run(&args)?;
        Ok(out)
    }

    /// The full-model run shared by several criteria, with its wall time.
    fn full_run(&mut self) -> Result<(PathBuf, f64), String> {
        if self.full.is_none() {
            let started = Instant::now();
            let result = self
                .train("full", &[])
                .map(|dir| (dir, started.elapsed().as_secs_f64()));
            self.full = Some(result);
        }
        self.full.clone().unwrap()
    }
}

fn gradient_integrity() -> Check {
    let started = Instant::now();
    let layer = run(&["gradcheck", "--scope", "layer"])?;
    let model = run(&["gradcheck", "--scope", "model"])?;
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1} s, limit 60 s"))?;
    let worst = |s: &str| {
        field(s.trim(), "scope").map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            let at = f.iter().position(|x| *x == "max_rel_error").unwrap_or(0);
            f.get(at + 1)
                .unwrap_or(&"?")
                .split(' ')
                .next()
                .unwrap_or("?")
                .to_string()
        })
    };
    Ok(format!(
        "layer max rel error {} (< 1e-4, 20 seeds), model {} (< 1e-3, 5 seeds), {secs:.1} s",
        worst(&layer)?,
        worst(&model)?
    ))
}

fn flow_exactness() -> Check {
    let started = Instant::now();
    let mut parts = Vec::new();
    for steps in [1, 5, 25] {
        let err = oracles::euler_oracle_error(steps);
        ensure(err < 1e-6, || format!("{steps} steps: error {err:e}"))?;
        parts.push(format!("{steps}: {err:.1e}"));
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 5.0, || format!("took {secs:.1} s, limit 5 s"))?;
    Ok(format!("max |x - x1| by steps {}", parts.join(", ")))
}

fn lora_noop_and_freeze(ws: &mut Workspace) -> Check {
    let started = Instant::now();
    let bundle = LatentBundle::random(4, 32, 16, 2, &mut SeededRng::new(11));
    let mut model = KeyTailorModel::new(ModelConfig::default(), Ablations::default())
        .map_err(|e| e.to_string())?;
    for (i, t) in [0.0, 0.25, 0.5, 0.95].into_iter().enumerate() {
        let x = Tensor::randn(bundle.grid().to_vec(), 1.0, &mut SeededRng::new(i as u64));
        model.adapters = true;
        let adapted = model.predict(&bundle, &x, t).map_err(|e| e.to_string())?;
        model.adapters = false;
        let base = model.predict(&bundle, &x, t).map_err(|e| e.to_string())?;
        ensure(adapted.bit_eq(&base), || {
            format!("zero adapters changed the output at t = {t}")
        })?;
    }
    let check_secs = started.elapsed().as_secs_f64();
    let (dir, train_secs) = ws.full_run()?;
    let summary = fs::read_to_string(dir.join("train_summary.tsv")).map_err(|e| e.to_string())?;
    let frozen = (
        field(&summary, "frozen_checksum_initial")?,
        field(&summary, "frozen_checksum_final")?,
    );
    ensure(frozen.0 == frozen.1, || {
        "frozen weights changed during training".into()
    })?;
    let trainable_moved = field(&summary, "trainable_checksum_initial")?
        != field(&summary, "trainable_checksum_final")?;
    ensure(trainable_moved, || "adapters did not move".into())?;
    let secs = check_secs + train_secs;
    ensure(secs < 120.0, || format!("took {secs:.1} s, limit 120 s"))?;
    Ok(format!(
        "zero-B output bit-identical at 4 timesteps; frozen checksum {}… unchanged after {FULL_STEPS} steps, {secs:.1} s",
        &frozen.0[..12]
    ))
}

fn sampler_oracle() -> Check {
    let started = Instant::now();
    let a = oracles::sampler_agreement(50);
    ensure(a.mismatches.is_empty(), || {
        format!("mismatches: {:?}", a.mismatches)
    })?;
    ensure(a.violations.is_empty(), || {
        format!("violations: {:?}", a.violations)
    })?;
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("took {secs:.1} s, limit 30 s"))?;
    Ok(format!(
        "{}/{} selections identical (50 videos, both scoring modes), {} keyframes, {} occluded frames dropped, {secs:.1} s",
        a.matches, a.videos, a.selected, a.filtered
    ))
}

fn score_formulas() -> Check {
    let started = Instant::now();
    let errors = oracles::score_formula_errors(100);
    for (name, err) in &errors {
        ensure(*err < 1e-6, || format!("{name}: error {err:e}"))?;
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("took {secs:.1} s, limit 30 s"))?;
    let worst = errors.iter().map(|e| e.1).fold(0.0, f64::max);
    Ok(format!(
        "{} scores over 100 inputs, max error {worst:.1e}, {secs:.1} s",
        errors.len()
    ))
}

fn configuration_fidelity() -> Check {
    let text = run(&["sample-keyframes", "--show-config"])?;
    let cfg: toml::Table = text.parse().map_err(|e| format!("{e}"))?;
    let get = |section: &str, key: &str| -> Result<toml::Value, String> {
        cfg.get(section)
            .and_then(|s| s.get(key))
            .cloned()
            .ok_or_else(|| format!("{section}.{key} missing"))
    };
    let float = |section: &str, key: &str, want: f64| -> Result<(), String> {
        let v = get(section, key)?;
        ensure(v.as_float() == Some(want), || {
            format!("{section}.{key} = {v}, expected {want}")
        })
    };
    let int = |section: &str, key: &str, want: i64| -> Result<(), String> {
        let v = get(section, key)?;
        ensure(v.as_integer() == Some(want), || {
            format!("{section}.{key} = {v}, expected {want}")
        })
    };
    float("sampler", "lambda", 0.5)?;
    float("model", "alpha", 0.3)?;
    int("sampler", "k_max", 3)?;
    float("sampler", "clarity_threshold", 50.0)?;
    float("sampler", "occlu_thres", 0.2)?;
    let weights: Vec<f64> = get("sampler", "weights")?
        .as_array()
        .ok_or("weights is not an array")?
        .iter()
        .filter_map(toml::Value::as_float)
        .collect();
    ensure(weights == [0.3, 0.2, 0.3, 0.2], || {
        format!("weights {weights:?}")
    })?;
    int("infer", "steps", 25)?;
    float("train", "lr", 1e-4)?;
    Ok("lambda 0.5, alpha 0.3, K 3, clarity 50, occlusion 0.2, weights (0.3, 0.2, 0.3, 0.2), 25 steps, lr 1e-4".into())
}

fn guider_silence() -> Check {
    let mut checked = 0;
    for seed in 0..4u64 {
        let cfg = ModelConfig {
            seed,
            ..ModelConfig::default()
        };
        let model = KeyTailorModel::new(cfg, Ablations::default()).map_err(|e| e.to_string())?;
        let mut rng = SeededRng::new(seed).fork(7);
        let scale = [1.0, 10.0, 1e3, 1e6][seed as usize];
        let (t, h, w) = (1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(3));
        let x = Tensor::uniform([3, 4 * t, 16 * h, 16 * w], -scale, scale, &mut rng);
        for (name, guider) in [("pose", &model.pose_guider), ("mask", &model.mask_guider)] {
            let y = guider.apply(&model.store, &x).map_err(|e| e.to_string())?;
            ensure(y.data().iter().all(|v| v.to_bits() == 0), || {
                format!("{name} guider output is not exactly zero (seed {seed})")
            })?;
            checked += y.len();
        }
    }
    Ok(format!(
        "pose and mask guiders: {checked} outputs, all +0.0 bit patterns"
    ))
}

fn overfit(ws: &mut Workspace) -> Check {
    let (dir, secs) = ws.full_run()?;
    let summary = fs::read_to_string(dir.join("train_summary.tsv")).map_err(|e| e.to_string())?;
    let num = |k: &str| -> Result<f64, String> {
        field(&summary, k)?.parse().map_err(|e| format!("{k}: {e}"))
    };
    let (first, last) = (num("probe_loss_initial")?, num("probe_loss_final")?);
    let ratio = last / first;
    ensure(ratio <= 0.5, || {
        format!("loss {first:.4} -> {last:.4}, ratio {ratio:.3} > 0.5")
    })?;
    ensure(secs < 300.0, || format!("took {secs:.1} s, limit 300 s"))?;
    Ok(format!(
        "probe loss {first:.4} -> {last:.4} (ratio {ratio:.3}) in {FULL_STEPS} steps, {secs:.1} s"
    ))
}

fn ablation_echo(ws: &mut Workspace) -> Check {
    let (full_dir, _) = ws.full_run()?;
    let full = mean_ssim(&full_dir)?;
    let mut parts = vec![format!("full {full:.4}")];
    let mut below = Vec::new();
    for flag in ["--no-cbdo", "--no-gdde", "--keyframes-1"] {
        let dir = ws.train(flag.trim_start_matches('-'), &[flag])?;
        let s = mean_ssim(&dir)?;
        parts.push(format!("{} {s:.4}", flag.trim_start_matches('-')));
        if full < s {
            below.push(flag.trim_start_matches('-'));
        }
    }
    let summary = format!("mean SSIM {}", parts.join(", "));
    if below.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{summary}; full model below {}", below.join(", ")))
    }
}

fn determinism(ws: &mut Workspace) -> Check {
    let root = ws.dir.path().join("determinism");
    let (a, b) = (root.join("a"), root.join("b"));
    for out in [&a, &b] {
        run(&[
            "gen-synthetic",
            "--seeds",
            "3,4",
            "--frames",
            "8",
            "--size",
            "32",
            "--out",
            p(&out.join("corpus")),
        ])?;
    }
    let mut compared = same_files(&a.join("corpus"), &b.join("corpus"), &["ktsr"])?;
    let sample = a.join("corpus/sample_0003");
    for out in [&a, &b] {
        run(&[
            "train",
            "--sample",
            p(&sample),
            "--steps",
            "5",
            "--lr",
            "1e-3",
            "--out",
            p(&out.join("train")),
            "--infer-after",
            "--infer-steps",
            "5",
        ])?;
        run(&[
            "sample-keyframes",
            "--sample",
            p(&sample),
            "--out",
            p(&out.join("keyframes")),
        ])?;
        run(&[
            "eval",
            "--generated",
            p(&out.join("train/infer/video.ktsr")),
            "--reference",
            p(&sample),
            "--out",
            p(&out.join("eval")),
        ])?;
    }
    compared += same_files(&a.join("train"), &b.join("train"), &["ktsr", "ktckpt"])?;
    // the training summary records wall time, so only these reports are compared
    for f in ["loss.tsv", "keyframes.tsv", "infer/metrics.tsv"] {
        let same = fs::read(a.join("train").join(f)).ok() == fs::read(b.join("train").join(f)).ok();
        ensure(same, || format!("train/{f} differs between reruns"))?;
        compared += 1;
    }
    compared += same_files(&a.join("keyframes"), &b.join("keyframes"), &["tsv"])?;
    compared += same_files(&a.join("eval"), &b.join("eval"), &["tsv"])?;

    let (full_dir, _) = ws.full_run()?;
    let reloaded = root.join("reloaded");
    run(&[
        "infer",
        "--checkpoint",
        p(&full_dir.join("checkpoint.ktckpt")),
        "--sample",
        p(&ws.sample),
        "--out",
        p(&reloaded),
    ])?;
    for f in ["latent.ktsr", "video.ktsr"] {
        let same = fs::read(reloaded.join(f)).ok() == fs::read(full_dir.join("infer").join(f)).ok();
        ensure(same, || {
            format!("checkpoint inference {f} differs from in-memory inference")
        })?;
    }
    Ok(format!(
        "{compared} rerun outputs bit-identical; checkpoint reload reproduces in-memory latent and video"
    ))
}

fn main() {
    // `cargo test -- --list` and filters are not meaningful here
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let suite_started = Instant::now();
    let mut ws = match Workspace::new() {
        Ok(ws) => Some(ws),
        Err(e) => {
            eprintln!("cannot prepare the shared sample: {e}");
            None
        }
    };
    type Criterion<'a> = (u8, &'a str, bool);
    let criteria: [Criterion; 10] = [
        (1, "gradient integrity", false),
        (2, "flow-matching exactness", false),
        (3, "adapter no-op and frozen base", false),
        (4, "keyframe sampler oracle", false),
        (5, "score formulas", false),
        (6, "configuration defaults", false),
        (7, "zero-initialized guiders", false),
        (8, "overfit smoke", false),
        (9, "ablation ordering (soft)", true),
        (10, "determinism and persistence", false),
    ];
    let mut hard_failures = 0;
    let mut soft_failures = 0;
    for (id, name, soft) in criteria {
        let started = Instant::now();
        let result = match (id, ws.as_mut()) {
            (1, _) => gradient_integrity(),
            (2, _) => flow_exactness(),
            (4, _) => sampler_oracle(),
            (5, _) => score_formulas(),
            (6, _) => configuration_fidelity(),
            (7, _) => guider_silence(),
            (_, None) => Err("shared sample unavailable".into()),
            (3, Some(ws)) => lora_noop_and_freeze(ws),
            (8, Some(ws)) => overfit(ws),
            (9, Some(ws)) => ablation_echo(ws),
            (_, Some(ws)) => determinism(ws),
        };
        let secs = started.elapsed().as_secs_f64();
        let status = match (&result, soft) {
            (Ok(_), _) => "PASS",
            (Err(_), true) => "SOFT-FAIL",
            (Err(_), false) => "FAIL",
        };
        match (&result, soft) {
            (Err(_), true) => soft_failures += 1,
            (Err(_), false) => hard_failures += 1,
            _ => {}
        }
        let detail = result.unwrap_or_else(|e| e);
        println!("{status:<9} {id:>2}  {name:<30} {detail}  [{secs:.1} s]");
    }
    println!(
        "acceptance: {} hard failure(s), {} soft failure(s), {:.1} s",
        hard_failures,
        soft_failures,
        suite_started.elapsed().as_secs_f64()
    );
    if hard_failures > 0 {
        std::process::exit(1);
    }
}
