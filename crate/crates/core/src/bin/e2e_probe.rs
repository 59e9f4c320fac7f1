use std::time::Instant;
use thermofuse::dataset::patches::{extract_patches, PatchSet};
use thermofuse::dataset::{load_sample, Manifest, Split};
use thermofuse::infer::{bicubic_baseline, infer_scene};
use thermofuse::metrics::{error_metrics, evaluate_against_reference, kelvin_to_celsius};
use thermofuse::model::discriminator::DiscriminatorConfig;
use thermofuse::model::generator::GeneratorConfig;
use thermofuse::synthscene::{generate_dataset, SynthConfig};
use thermofuse::training::{train, LossWeights, TrainConfig};

fn main() {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(600);
    let corr: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(24.0);
    let spread: f64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let dir = std::path::PathBuf::from("/tmp/e2e_probe_data");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let t0 = Instant::now();
    let mut scfg = SynthConfig { correlation_length: corr, ..SynthConfig::default() };
    for o in scfg.class_offsets_k.iter_mut() { *o *= spread; }
    println!("steps={steps} corr={corr} spread={spread}");
    let manifest_path = generate_dataset(&scfg, &dir).unwrap();
    println!("dataset: {:?}", t0.elapsed());
    let (manifest, base) = Manifest::load(&manifest_path).unwrap();
    let t0 = Instant::now();
    let mut sets = Vec::new();
    for e in manifest.samples.iter().filter(|s| s.split == Split::Train) {
        let s = load_sample(&manifest, &base, e).unwrap();
        sets.push(extract_patches(&s, &manifest.normalization, 96, 24).unwrap());
    }
    let patches = PatchSet::merge(sets).unwrap();
    println!("patches: {} in {:?}", patches.len(), t0.elapsed());

    let gcfg = GeneratorConfig::small();
    let dcfg = DiscriminatorConfig::small();
    let tcfg = TrainConfig { steps, batch_size: 8, seed: 7, ..TrainConfig::default() };
    let t0 = Instant::now();
    let out = train(&patches, &gcfg, &dcfg, &tcfg, &LossWeights::default(), None).unwrap();
    println!("train {} steps: {:?}", steps, t0.elapsed());
    let r = out.trace.records();
    let avg = |lo: usize, hi: usize, f: &dyn Fn(&thermofuse::training::LossRecord) -> f64| -> f64 {
        r[lo..hi].iter().map(|x| f(x)).sum::<f64>() / (hi - lo) as f64
    };
    println!("G loss avg first100={:.3} last100={:.3}", avg(0,100.min(r.len()), &|x| x.loss_g), avg(r.len().saturating_sub(100), r.len(), &|x| x.loss_g));
    println!("D loss avg first100={:.3} last100={:.3}", avg(0,100.min(r.len()), &|x| x.loss_d), avg(r.len().saturating_sub(100), r.len(), &|x| x.loss_d));
    println!("content first={:.4} last={:.4}", r[0].l_content, r.last().unwrap().l_content);

    let t0 = Instant::now();
    for e in manifest.samples.iter().filter(|s| s.split == Split::Test) {
        let s = load_sample(&manifest, &base, e).unwrap();
        let fused = infer_scene(&out.generator, &gcfg, &s, &manifest.normalization).unwrap();
        let baseline = bicubic_baseline(&s).unwrap();
        let truth = s.t2_lst_fine_truth.as_ref().unwrap();
        let fr = error_metrics(&kelvin_to_celsius(&fused), &kelvin_to_celsius(truth)).unwrap().rmse;
        let br = error_metrics(&kelvin_to_celsius(&baseline), &kelvin_to_celsius(truth)).unwrap().rmse;
        let fm = evaluate_against_reference(&fused, s.t2_lst_mid.as_ref().unwrap()).unwrap().rmse;
        let bm = evaluate_against_reference(&baseline, s.t2_lst_mid.as_ref().unwrap()).unwrap().rmse;
        println!("{}: fine rmse fused={fr:.3} bicubic={br:.3} (ratio {:.3}) | pooled fused={fm:.3} bicubic={bm:.3}", e.id, fr/br);
    }
    println!("infer+eval: {:?}", t0.elapsed());
}
