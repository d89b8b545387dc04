use std::path::{Path, PathBuf};

use qsi::error::{Error, Result};
use qsi::io::{write_frame_stack, StackMeta};
use qsi::simulator::{derive_stream_seed, sample_qsi_stack, SceneSpec};

use crate::config::RunConfig;

pub struct Args {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub clusters: Option<u64>,
    pub out: Option<PathBuf>,
    pub reference_out: Option<PathBuf>,
}

fn meta_for(scene: &SceneSpec, seed: u64) -> StackMeta {
    StackMeta {
        grid: scene.grid,
        cluster_frames: scene.cluster_frames,
        usable_indices: scene.usable_indices.clone(),
        exposure_us: scene.exposure_us,
        duty_cycle_us: scene.duty_cycle_us,
        seed,
        scene_digest: scene.lineage_digest(),
    }
}

pub fn run(args: &Args) -> Result<()> {
    let config = RunConfig::load(&args.config)?;
    let config_dir = args
        .config
        .parent()
        .unwrap_or(Path::new("."))
        .to_path_buf();
    let seed = args.seed.unwrap_or(config.seed);
    let clusters = args.clusters.unwrap_or(config.clusters);
    let out = args
        .out
        .clone()
        .or(config.out_stack.clone())
        .ok_or_else(|| Error::Config("no output path: pass --out or set out_stack".into()))?;
    let reference_out = args.reference_out.clone().or(config.out_ref.clone());

    // build and validate everything before touching the filesystem
    let scene = config.build_scene(&config_dir)?;
    let reference = reference_out
        .as_ref()
        .map(|path| (path.clone(), scene.reference_scene()));

    let stack = sample_qsi_stack(&scene, clusters, seed)?;
    write_frame_stack(&stack, &meta_for(&scene, seed), &out)?;
    let mut result = format!(
        "RESULT simulate clusters={clusters} frames={} seed={seed} out={}",
        scene.cluster_frames,
        out.display()
    );
    if let Some((path, ref_scene)) = reference {
        let ref_seed = derive_stream_seed(seed, "reference");
        let ref_stack = sample_qsi_stack(&ref_scene, clusters, ref_seed)?;
        write_frame_stack(&ref_stack, &meta_for(&ref_scene, ref_seed), &path)?;
        result.push_str(&format!(" ref={}", path.display()));
    }
    println!("{result}");
    Ok(())
}
