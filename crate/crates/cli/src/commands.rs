use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ldrcnet::arch::{crop_top_left, reflect_pad};
use ldrcnet::data::{list_images, load_image, make_dataset, save_image, RainRanges};
use ldrcnet::deform::inject_backward_fault;
use ldrcnet::gradcheck::{CheckOptions, GradCheckRegistry};
use ldrcnet::metrics::{eval_dataset, MetricReport};
use ldrcnet::train::{Checkpoint, Phase};
use ldrcnet::{Graph, Shape, Tensor};

use crate::{CliError, CliResult, EvalArgs, GenDataArgs, GradcheckArgs, InferArgs, InspectArgs};

pub fn gen_data(a: GenDataArgs) -> CliResult {
    if !a.clean_dir.is_dir() {
        return Err(CliError::Usage(format!("--clean-dir {} is not a directory", a.clean_dir.display())));
    }
    if a.count == 0 {
        return Err(CliError::Usage("--count must be positive".into()));
    }
    let ranges = RainRanges {
        angle_deg: a.angle,
        length_px: a.length,
        density: a.density,
        intensity: a.intensity,
    };
    let ds = make_dataset(&a.clean_dir, &a.out, a.count, &ranges, a.seed, a.format.into())?;
    println!("{}", ds.root.join(ldrcnet::data::MANIFEST).display());
    Ok(())
}

/// `(input, output)` file pairs: one pair for a file, or every image of a
/// directory mapped into the output directory under the same name.
fn io_pairs(input: &Path, output: &Path) -> CliResult<Vec<(PathBuf, PathBuf)>> {
    if input.is_dir() {
        let files = list_images(input)?;
        if files.is_empty() {
            return Err(CliError::Usage(format!("no images in {}", input.display())));
        }
        Ok(files
            .into_iter()
            .map(|f| {
                let out = output.join(f.file_name().expect("listed files have names"));
                (f, out)
            })
            .collect())
    } else {
        Ok(vec![(input.to_path_buf(), output.to_path_buf())])
    }
}

pub fn infer(a: InferArgs) -> CliResult {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    if ckpt.phase == Phase::Constraint {
        return Err(CliError::Usage(format!(
            "{} is a constraint-phase checkpoint; inference needs a derain or joint checkpoint",
            a.checkpoint.display()
        )));
    }
    let (nets, _) = ckpt.restore()?;
    for (src, dst) in io_pairs(&a.input, &a.output)? {
        let img = load_image(&src)?;
        let out = nets.infer_padded(&img)?;
        save_image(&dst, &out)?;
        println!("{} -> {}", src.display(), dst.display());
    }
    Ok(())
}

fn by_stem(dir: &Path) -> CliResult<BTreeMap<String, PathBuf>> {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("{} is not a directory", dir.display())));
    }
    Ok(list_images(dir)?
        .into_iter()
        .filter_map(|p| Some((p.file_stem()?.to_str()?.to_string(), p)))
        .collect())
}

pub fn eval(a: EvalArgs) -> CliResult {
    let pred = by_stem(&a.pred_dir)?;
    let gt = by_stem(&a.gt_dir)?;
    if pred.len() != gt.len() {
        return Err(CliError::Usage(format!(
            "{} predictions but {} ground-truth images",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(CliError::Usage("no images to evaluate".into()));
    }
    let mut names = Vec::new();
    let mut outputs = Vec::new();
    let mut targets = Vec::new();
    for (name, p) in &pred {
        let g = gt
            .get(name)
            .ok_or_else(|| CliError::Usage(format!("no ground truth named `{name}` in {}", a.gt_dir.display())))?;
        names.push(name.clone());
        outputs.push(load_image(p)?);
        targets.push(load_image(g)?);
    }
    let report = eval_dataset(&names, &outputs, &targets)?;
    let (tsv, json) = (a.report.with_extension("tsv"), a.report.with_extension("json"));
    if let Some(dir) = tsv.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&tsv, report.to_tsv())?;
    fs::write(&json, report.to_json()?)?;
    // The structured report must read back to the same values.
    let back = MetricReport::from_json(&fs::read_to_string(&json)?)?;
    if back != report {
        return Err(CliError::Check("report did not round-trip through JSON".into()));
    }
    println!("{}", report.summary());
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> CliResult {
    if a.seeds == 0 {
        return Err(CliError::Usage("--seeds must be positive".into()));
    }
    inject_backward_fault(a.inject_fault);
    let start = Instant::now();
    let opts = CheckOptions {
        seeds: a.seeds,
        ..Default::default()
    };
    let reports = GradCheckRegistry::default().run(a.module.filter(), &opts)?;
    println!("op\tmodule\tworst_rel_err\ttolerance\tchecked\tskipped\tstatus");
    for r in &reports {
        println!(
            "{}\t{}\t{:.3e}\t{:.0e}\t{}\t{}\t{}",
            r.name,
            r.module,
            r.worst,
            r.tolerance,
            r.checked,
            r.skipped,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| format!("{} (worst {:.3e})", r.name, r.worst))
        .collect();
    println!("{} ops, {:.1}s", reports.len(), start.elapsed().as_secs_f64());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(format!("gradient mismatch in {}", failed.join(", "))))
    }
}

/// Min-max normalisation of one channel to `[0, 1]`; a constant channel
/// maps to 0.5.
pub fn normalize_channel(plane: &[f32]) -> Vec<f32> {
    let (lo, hi) = plane
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi - lo <= 0.0 {
        return vec![0.5; plane.len()];
    }
    plane.iter().map(|&v| (v - lo) / (hi - lo)).collect()
}

pub fn inspect(a: InspectArgs) -> CliResult {
    let (nets, _) = Checkpoint::load(&a.checkpoint)?.restore()?;
    let img = load_image(&a.input)?;
    let s = img.shape();
    let (hp, wp) = (s.h.next_multiple_of(4), s.w.next_multiple_of(4));
    let mut g = Graph::inference();
    let x = g.constant(reflect_pad(&img, hp, wp))?;
    nets.derain(&mut g, x)?;
    let Some(v) = g.tagged(&a.layer) else {
        let names: Vec<&str> = g.tag_names().collect();
        return Err(CliError::Usage(format!("unknown layer `{}`; available: {}", a.layer, names.join(", "))));
    };
    let act = g.value(v);
    let t = act.shape();
    let act = crop_top_left(act, (s.h * t.h).div_ceil(hp), (s.w * t.w).div_ceil(wp))?;
    let t = act.shape();
    fs::create_dir_all(&a.out)?;
    for c in 0..t.c {
        let plane = Tensor::new(Shape::new(1, 1, t.h, t.w), normalize_channel(act.plane(0, c)))?;
        save_image(&a.out.join(format!("{}_c{c:03}.png", a.layer)), &plane)?;
    }
    println!("{} channels of {}x{} written to {}", t.c, t.h, t.w, a.out.display());
    Ok(())
}
