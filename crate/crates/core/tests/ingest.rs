use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use image::{Rgb, RgbImage, Rgba, RgbaImage};

use maosr::datagen::{validate_manifest, DatasetManifest, Partition};
use maosr::ingest::{ingest_composite, ingest_utzappos, BackgroundSource, ExternalAssetIndex};
use maosr::splits::{builtin_preset, CorrelationKind, GroupTag, SplitPlan, TestGroup};
use maosr::Error;

const TRAIN_COMBOS: [(&str, &str); 13] = [
    ("Faux.Leather", "Boots.Knee.High"),
    ("Faux.Leather", "Boots.Mid-Calf"),
    ("Faux.Leather", "Shoes.Flats"),
    ("Full.grain.leather", "Boots.Mid-Calf"),
    ("Full.grain.leather", "Shoes.Loafers"),
    ("Leather", "Shoes.Flats"),
    ("Leather", "Shoes.Heels"),
    ("Leather", "Shoes.Loafers"),
    ("Rubber", "Boots.Knee.High"),
    ("Rubber", "Boots.Mid-Calf"),
    ("Suede", "Boots.Knee.High"),
    ("Suede", "Shoes.Flats"),
    ("Suede", "Shoes.Heels"),
];

/// Raw source strings are lowercase with a prefix; the mapping restores the
/// preset identifiers.
fn raw(v: &str) -> String {
    format!("src:{}", v.to_lowercase())
}

struct Zappos {
    dir: tempfile::TempDir,
}

impl Zappos {
    /// Training combination `i` gets `10 + i` images; a few extra tuples and
    /// defective rows are added.
    fn new(skip: Option<usize>) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let img_dir = dir.path().join("img");
        std::fs::create_dir_all(&img_dir).unwrap();
        let mut csv = String::from("path,material,type\n");
        let mut mapping = BTreeMap::new();
        let mut k = 0u32;
        let mut add = |csv: &mut String, m: &str, t: &str, n: usize| {
            for _ in 0..n {
                let name = format!("img/{k:04}.png");
                RgbImage::from_pixel(12, 10, Rgb([(k % 251) as u8, (k / 251) as u8, 50]))
                    .save(dir.path().join(&name))
                    .unwrap();
                writeln!(csv, "{name},{},{}", raw(m), raw(t)).unwrap();
                k += 1;
            }
        };
        for (i, (m, t)) in TRAIN_COMBOS.iter().enumerate() {
            if Some(i) != skip {
                add(&mut csv, m, t, 10 + i);
            }
        }
        add(&mut csv, "Suede", "Boots.Mid-Calf", 4);
        add(&mut csv, "Canvas", "Sandals", 3);
        add(&mut csv, "Leather", "Sandals", 2);
        add(&mut csv, "Canvas", "Shoes.Heels", 2);
        let preset = builtin_preset("ut-zappos", CorrelationKind::Explicit).unwrap();
        for d in &preset.domains {
            for v in d.known_values.iter().chain(&d.unknown_values) {
                mapping.insert(raw(v), v.clone());
            }
        }
        mapping.insert("src:wool".into(), "Wool".into());
        writeln!(csv, "img/0000.png,src:mystery,{}", raw("Sandals")).unwrap();
        writeln!(csv, "img/0000.png,src:wool,{}", raw("Sandals")).unwrap();
        std::fs::write(dir.path().join("index.csv"), csv).unwrap();
        std::fs::write(dir.path().join("mapping.json"), serde_json::to_string(&mapping).unwrap()).unwrap();
        Zappos { dir }
    }

    fn index(&self) -> ExternalAssetIndex {
        ExternalAssetIndex::load(&self.dir.path().join("index.csv"), &self.dir.path().join("mapping.json")).unwrap()
    }
}

fn zappos_plan() -> SplitPlan {
    builtin_preset("ut-zappos", CorrelationKind::Explicit).unwrap().plan(0).unwrap()
}

fn ingest(z: &Zappos, out: &Path, seed: u64) -> DatasetManifest {
    ingest_utzappos(&z.index(), &zappos_plan(), seed, 8, out).unwrap()
}

fn records_of<'a>(m: &'a DatasetManifest, a: &str, b: &str) -> Vec<&'a maosr::datagen::SampleRecord> {
    m.records.iter().filter(|r| r.labels == [a, b]).collect()
}

#[test]
fn zappos_groups_and_partitions() {
    let z = Zappos::new(None);
    let out = tempfile::tempdir().unwrap();
    let m = ingest(&z, out.path(), 0);

    let heels = records_of(&m, "Leather", "Shoes.Heels");
    assert!(heels.iter().any(|r| r.partition == Partition::Train));
    for r in heels.iter().filter(|r| r.partition != Partition::Test) {
        assert_eq!(r.group, GroupTag::KnownSeen);
    }
    let canvas = records_of(&m, "Canvas", "Sandals");
    assert_eq!(canvas.len(), 3);
    assert!(canvas.iter().all(|r| r.partition == Partition::Test && r.group == GroupTag::OodAll));
    let unseen = records_of(&m, "Suede", "Boots.Mid-Calf");
    assert_eq!(unseen.len(), 4);
    assert!(unseen.iter().all(|r| r.partition == Partition::Test && r.group == GroupTag::KnownUnseenCombo));
    assert!(records_of(&m, "Leather", "Sandals").iter().all(|r| r.group == GroupTag::OodAttr(1)));
    assert!(records_of(&m, "Canvas", "Shoes.Heels").iter().all(|r| r.group == GroupTag::OodAttr(0)));
}

#[test]
fn zappos_balances_by_downsampling_to_the_scarcest_combination() {
    let z = Zappos::new(None);
    let out = tempfile::tempdir().unwrap();
    let m = ingest(&z, out.path(), 0);
    // scarcest combination: 10 images, 5 held out for test, 5 left
    assert_eq!(m.info.downsampled_to, Some(5));
    assert!(!m.info.test_balanced);
    for (a, b) in TRAIN_COMBOS {
        let rs = records_of(&m, a, b);
        assert_eq!(rs.iter().filter(|r| r.partition == Partition::Train).count(), 4, "({a}, {b})");
        assert_eq!(rs.iter().filter(|r| r.partition == Partition::Val).count(), 1, "({a}, {b})");
    }
    // held-out Known test images: half of each combination
    let held = records_of(&m, "Suede", "Shoes.Heels");
    assert_eq!(held.iter().filter(|r| r.partition == Partition::Test).count(), 11);
    assert!(validate_manifest(&m).is_empty(), "{:?}", validate_manifest(&m));
    assert_eq!(m.info.excluded_rows.get("unmapped_label"), Some(&1));
    assert_eq!(m.info.excluded_rows.get("label_outside_domain"), Some(&1));
}

#[test]
fn zappos_test_groups_come_from_available_tuples() {
    let z = Zappos::new(None);
    let out = tempfile::tempdir().unwrap();
    let m = ingest(&z, out.path(), 0);
    let g = &m.plan().test_groups;
    assert_eq!(g[&TestGroup::Known].len(), 14);
    assert_eq!(g[&TestGroup::OodAttr(0)].len(), 1);
    assert_eq!(g[&TestGroup::OodAttr(1)].len(), 1);
    assert_eq!(g[&TestGroup::OodAll].len(), 1);
}

#[test]
fn zappos_labels_trace_to_source_rows() {
    let z = Zappos::new(None);
    let index = z.index();
    let out = tempfile::tempdir().unwrap();
    let m = ingest(&z, out.path(), 0);
    let source: std::collections::BTreeSet<Vec<String>> = index
        .rows
        .iter()
        .filter_map(|r| r.raw_labels.iter().map(|l| index.label_mapping.get(l).cloned()).collect())
        .collect();
    assert!(m.records.iter().all(|r| source.contains(&r.labels)));
}

#[test]
fn zappos_is_deterministic() {
    let z = Zappos::new(None);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = ingest(&z, a.path(), 4);
    let mb = ingest(&z, b.path(), 4);
    assert_eq!(ma.fingerprint().unwrap(), mb.fingerprint().unwrap());
    for r in &ma.records {
        assert_eq!(std::fs::read(a.path().join(&r.path)).unwrap(), std::fs::read(b.path().join(&r.path)).unwrap());
    }
}

#[test]
fn zappos_missing_training_combination_is_named() {
    let z = Zappos::new(Some(6));
    let out = tempfile::tempdir().unwrap();
    let err = ingest_utzappos(&z.index(), &zappos_plan(), 0, 8, out.path()).unwrap_err();
    assert!(matches!(err, Error::Ingestion(_)), "{err}");
    assert!(err.to_string().contains("(Leather, Shoes.Heels)"), "{err}");
}

fn write_index(dir: &Path, name: &str, rows: &[(String, String)]) {
    let mut csv = String::from("path,label\n");
    let mut mapping = BTreeMap::new();
    for (p, l) in rows {
        writeln!(csv, "{p},{l}").unwrap();
        mapping.insert(l.clone(), l.clone());
    }
    std::fs::write(dir.join(format!("{name}.csv")), csv).unwrap();
    std::fs::write(dir.join(format!("{name}.json")), serde_json::to_string(&mapping).unwrap()).unwrap();
}

fn load_index(dir: &Path, name: &str) -> ExternalAssetIndex {
    ExternalAssetIndex::load(&dir.join(format!("{name}.csv")), &dir.join(format!("{name}.json"))).unwrap()
}

/// Five RGBA crops per object and five scenes per scene label.
fn composite_assets(dir: &Path, objects: &[String], scenes: &[String]) {
    let mut rows = Vec::new();
    for (i, o) in objects.iter().enumerate() {
        for k in 0..5u8 {
            let p = format!("obj_{i}_{k}.png");
            let mut crop = RgbaImage::from_pixel(6, 6, Rgba([i as u8 * 20, k * 40, 90, 255]));
            crop.put_pixel(0, 0, Rgba([0, 0, 0, 0]));
            crop.save(dir.join(&p)).unwrap();
            rows.push((p, o.clone()));
        }
    }
    write_index(dir, "objects", &rows);
    let mut rows = Vec::new();
    for (i, s) in scenes.iter().enumerate() {
        for k in 0..5u8 {
            let p = format!("scene_{i}_{k}.png");
            RgbImage::from_pixel(20, 20, Rgb([200, i as u8 * 15, k * 30])).save(dir.join(&p)).unwrap();
            rows.push((p, s.clone()));
        }
    }
    write_index(dir, "scenes", &rows);
}

fn scene_object_plan() -> SplitPlan {
    let mut p = builtin_preset("scene-object", CorrelationKind::Correlated).unwrap();
    p.samples_per_combination = 10;
    p.test_samples_per_tuple = 1;
    p.plan(0).unwrap()
}

fn all_values(plan: &SplitPlan, m: usize) -> Vec<String> {
    let d = &plan.domains[m];
    d.known_values.iter().chain(&d.unknown_values).cloned().collect()
}

#[test]
fn scene_object_composites() {
    let assets = tempfile::tempdir().unwrap();
    let plan = scene_object_plan();
    composite_assets(assets.path(), &all_values(&plan, 0), &all_values(&plan, 1));
    let out = tempfile::tempdir().unwrap();
    let m = ingest_composite(
        &load_index(assets.path(), "objects"),
        &BackgroundSource::Index(load_index(assets.path(), "scenes")),
        &plan,
        0,
        16,
        out.path(),
    )
    .unwrap();
    assert!(validate_manifest(&m).is_empty(), "{:?}", validate_manifest(&m));
    assert_eq!(m.info.image_shape, [3, 16, 16]);
    let boat = records_of(&m, "boat", "beach");
    assert!(boat.iter().any(|r| r.partition == Partition::Train));
    assert!(boat.iter().all(|r| r.group == GroupTag::KnownSeen));
    let bird = records_of(&m, "bird", "ball_pit");
    assert_eq!(bird.len(), 1);
    assert_eq!(bird[0].group, GroupTag::OodAll);
    assert_eq!(m.partition(Partition::Test).count(), 4 * 36);
    assert_eq!(m.partition(Partition::Train).count(), 6 * 9);
}

#[test]
fn color_object_uses_flat_backgrounds() {
    let assets = tempfile::tempdir().unwrap();
    let mut preset = builtin_preset("color-object", CorrelationKind::Correlated).unwrap();
    preset.samples_per_combination = 4;
    preset.test_samples_per_tuple = 1;
    let plan = preset.plan(0).unwrap();
    composite_assets(assets.path(), &all_values(&plan, 0), &[]);
    let out = tempfile::tempdir().unwrap();
    let m = ingest_composite(
        &load_index(assets.path(), "objects"),
        &BackgroundSource::FlatColors(preset.colors.clone()),
        &plan,
        0,
        16,
        out.path(),
    )
    .unwrap();
    let r = m.records.iter().find(|r| r.labels[1] == "C3").unwrap();
    let img = image::open(out.path().join(&r.path)).unwrap().to_rgb8();
    // corner pixels are outside the 6x6 crop
    assert_eq!(img.get_pixel(0, 0).0, [255, 0, 0]);
}

#[test]
fn empty_background_index_is_an_ingestion_error() {
    let assets = tempfile::tempdir().unwrap();
    let plan = scene_object_plan();
    composite_assets(assets.path(), &all_values(&plan, 0), &[]);
    let out = tempfile::tempdir().unwrap();
    let err = ingest_composite(
        &load_index(assets.path(), "objects"),
        &BackgroundSource::Index(ExternalAssetIndex::default()),
        &plan,
        0,
        16,
        out.path(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Ingestion(_)), "{err}");
}
