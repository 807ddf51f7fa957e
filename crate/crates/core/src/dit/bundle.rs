//! Per-sample conditioning tensors, persisted as KTSR files grouped by a
//! `role<TAB>path` manifest.

use std::fs;
use std::path::{Path, PathBuf};

use crate::latents::vae::latent_frames;
use crate::numerics::{ktsr, SeededRng, Tensor};
use crate::{Error, Result};

pub const MANIFEST: &str = "bundle.tsv";

/// Everything the model reads for one video, before any trainable layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentBundle {
    /// Rendered skeleton maps `[3 × T × H × W]`.
    pub pose_maps: Tensor,
    /// Agnostic video `[3 × T × H × W]`.
    pub agnostic: Tensor,
    /// Resized agnostic mask `[1 × T' × H' × W']`.
    pub mask_latent: Tensor,
    /// Encoded first-frame try-on `[C × H' × W']`.
    pub garment_latent: Tensor,
    /// Encoded garment reference image `[C × H' × W']`.
    pub reference_latent: Tensor,
    /// Garment latents of the keyframes `[K × C × H' × W']`.
    pub keyframe_garment: Tensor,
    /// Background latent of the most complete keyframe `[C × H' × W']`.
    pub key_background: Tensor,
    /// Plain encoding of the agnostic video `[C × T' × H' × W']`.
    pub agnostic_latent: Tensor,
    /// Encoded ground-truth video `[C × T' × H' × W']`.
    pub target: Tensor,
}

const ROLES: [&str; 9] = [
    "pose_maps",
    "agnostic",
    "mask_latent",
    "garment_latent",
    "reference_latent",
    "keyframe_garment",
    "key_background",
    "agnostic_latent",
    "target",
];

impl LatentBundle {
    fn tensors(&self) -> [&Tensor; 9] {
        [
            &self.pose_maps,
            &self.agnostic,
            &self.mask_latent,
            &self.garment_latent,
            &self.reference_latent,
            &self.keyframe_garment,
            &self.key_background,
            &self.agnostic_latent,
            &self.target,
        ]
    }

    /// Random contents on a `frames × size × size` video with `channels`
    /// latent channels and `keyframes` keyframes. For diagnostics and tests.
    pub fn random(
        frames: usize,
        size: usize,
        channels: usize,
        keyframes: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let (tl, s) = (latent_frames(frames), size / 8);
        let video = [3, frames, size, size];
        let mask = Tensor::from_fn([1, tl, s, s], |_| if rng.chance(0.5) { 1.0 } else { 0.0 });
        LatentBundle {
            pose_maps: Tensor::uniform(video, 0.0, 1.0, rng),
            agnostic: Tensor::uniform(video, 0.0, 1.0, rng),
            mask_latent: mask,
            garment_latent: Tensor::randn([channels, s, s], 1.0, rng),
            reference_latent: Tensor::randn([channels, s, s], 1.0, rng),
            keyframe_garment: Tensor::randn([keyframes, channels, s, s], 1.0, rng),
            key_background: Tensor::randn([channels, s, s], 1.0, rng),
            agnostic_latent: Tensor::randn([channels, tl, s, s], 1.0, rng),
            target: Tensor::randn([channels, tl, s, s], 1.0, rng),
        }
    }

    pub fn frames(&self) -> usize {
        self.pose_maps.shape()[1]
    }

    pub fn latent_channels(&self) -> usize {
        self.target.shape()[0]
    }

    /// Latent grid `[C, T', H', W']`.
    pub fn grid(&self) -> [usize; 4] {
        let s = self.target.shape();
        [s[0], s[1], s[2], s[3]]
    }

    /// Keyframe garment latents as separate `[C × H' × W']` tensors.
    pub fn keyframe_latents(&self) -> Result<Vec<Tensor>> {
        (0..self.keyframe_garment.shape()[0])
            .map(|k| self.keyframe_garment.index_outer(k))
            .collect()
    }

    /// Checks every tensor against the shared grid.
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, t: &Tensor| {
            Err(Error::Shape(format!(
                "bundle {what} has shape {:?}, grid is {:?}",
                t.shape(),
                self.target.shape()
            )))
        };
        let ts = self.target.shape();
        if ts.len() != 4 {
            return bad("target", &self.target);
        }
        let (c, tl, hl, wl) = (ts[0], ts[1], ts[2], ts[3]);
        let ps = self.pose_maps.shape();
        if ps.len() != 4 || ps[0] != 3 {
            return bad("pose maps", &self.pose_maps);
        }
        if self.agnostic.shape() != ps {
            return bad("agnostic video", &self.agnostic);
        }
        if self.mask_latent.shape() != [1, tl, hl, wl] {
            return bad("mask latent", &self.mask_latent);
        }
        for (what, t) in [
            ("garment latent", &self.garment_latent),
            ("reference latent", &self.reference_latent),
            ("key background", &self.key_background),
        ] {
            if t.shape() != [c, hl, wl] {
                return bad(what, t);
            }
        }
        let ks = self.keyframe_garment.shape();
        if ks.len() != 4 || ks[0] == 0 || ks[1..] != [c, hl, wl] {
            return bad("keyframe garment latents", &self.keyframe_garment);
        }
        if self.agnostic_latent.shape() != ts {
            return bad("agnostic latent", &self.agnostic_latent);
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = String::new();
        for (role, t) in ROLES.iter().zip(self.tensors()) {
            let file = format!("{role}.ktsr");
            ktsr::write(&dir.join(&file), t)?;
            manifest.push_str(&format!("{role}\t{file}\n"));
        }
        let path = dir.join(MANIFEST);
        fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
    }

    /// Reads a bundle from its directory or its manifest path.
    pub fn read(path: &Path) -> Result<Self> {
        let manifest = if path.is_dir() {
            path.join(MANIFEST)
        } else {
            path.to_path_buf()
        };
        let dir = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        let mut paths: Vec<Option<PathBuf>> = vec![None; ROLES.len()];
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let (role, file) = line.split_once('\t').ok_or_else(|| {
                Error::Format(format!(
                    "{}:{}: expected role<TAB>path",
                    manifest.display(),
                    n + 1
                ))
            })?;
            let slot = ROLES.iter().position(|r| *r == role).ok_or_else(|| {
                Error::Format(format!("{}: unknown role {role:?}", manifest.display()))
            })?;
            if paths[slot].replace(dir.join(file)).is_some() {
                return Err(Error::Format(format!(
                    "{}: role {role:?} listed twice",
                    manifest.display()
                )));
            }
        }
        let mut ts = Vec::with_capacity(ROLES.len());
        for (role, p) in ROLES.iter().zip(paths) {
            let p = p.ok_or_else(|| {
                Error::Format(format!("{}: missing role {role:?}", manifest.display()))
            })?;
            ts.push(ktsr::read(&p)?);
        }
        let mut it = ts.into_iter();
        let mut next = || it.next().expect("one tensor per role");
        let bundle = LatentBundle {
            pose_maps: next(),
            agnostic: next(),
            mask_latent: next(),
            garment_latent: next(),
            reference_latent: next(),
            keyframe_garment: next(),
            key_background: next(),
            agnostic_latent: next(),
            target: next(),
        };
        bundle
            .validate()
            .map_err(|e| Error::Format(format!("{}: {e}", manifest.display())))?;
        Ok(bundle)
    }
}
