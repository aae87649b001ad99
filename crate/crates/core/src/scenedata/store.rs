//! On-disk dataset layout.
//!
//! ```text
//! <dir>/manifest.txt          header lines, then one line per sample
//! <dir>/images/<id>.rgb       raw 8-bit RGB, interleaved, row-major (h·w·3 bytes)
//! <dir>/masks/<id>.mask       b"DMSK", u32 LE height, u32 LE width, h·w bytes of 0/255
//! ```
//!
//! Sample lines read `<id> <split> <labels,comma,separated> <bg_class> <seed> <image> <mask>`.

use std::fs;
use std::path::Path;

use super::{Dataset, DatasetSpec, SceneSample, Split};
use crate::disentangle::io::{read_mask_file, write_mask_file};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";
const MAGIC: &str = "dapt-scenes";
const VERSION: u32 = 1;

pub fn save(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("images")).map_err(|e| Error::io(dir, e))?;
    fs::create_dir_all(dir.join("masks")).map_err(|e| Error::io(dir, e))?;
    let spec = &dataset.spec;
    let mut manifest = String::new();
    manifest.push_str(&format!("{MAGIC} {VERSION}\n"));
    manifest.push_str(&format!("image_size {}\n", spec.image_size));
    manifest.push_str(&format!("train_per_class {}\n", spec.train_per_class));
    manifest.push_str(&format!("test_per_class {}\n", spec.test_per_class));
    manifest.push_str(&format!("multi_object {}\n", spec.multi_object));
    manifest.push_str(&format!("max_objects {}\n", spec.max_objects));
    manifest.push_str(&format!("partition_seed {}\n", spec.partition_seed));
    manifest.push_str(&format!("context_bias {}\n", spec.context_bias));
    manifest.push_str(&format!("classes {}\n", dataset.class_names.join(",")));
    manifest.push_str(&format!("samples {}\n", dataset.samples.len()));

    for s in &dataset.samples {
        let image_rel = format!("images/{:06}.rgb", s.id);
        let mask_rel = format!("masks/{:06}.mask", s.id);
        let n = s.size * s.size;
        let mut rgb = Vec::with_capacity(3 * n);
        for i in 0..n {
            for ch in 0..3 {
                rgb.push(s.pixels[ch * n + i]);
            }
        }
        let image_path = dir.join(&image_rel);
        fs::write(&image_path, &rgb).map_err(|e| Error::io(&image_path, e))?;
        write_mask_file(&dir.join(&mask_rel), s.size, s.size, &s.gt_mask)?;
        let labels: Vec<String> = s.labels.iter().map(|l| l.to_string()).collect();
        manifest.push_str(&format!(
            "{} {} {} {} {} {} {}\n",
            s.id,
            s.split.as_str(),
            labels.join(","),
            s.bg_class,
            s.seed,
            image_rel,
            mask_rel
        ));
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

fn parse<T: std::str::FromStr>(path: &Path, line: usize, field: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::format(path, format!("line {line}: bad {field} `{v}`")))
}

pub fn load(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::Missing(path));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    let mut header = |key: &str| -> Result<(usize, String)> {
        let (n, line) = lines
            .next()
            .ok_or_else(|| Error::format(&path, format!("truncated before `{key}`")))?;
        let (k, v) = line.split_once(' ').unwrap_or((line, ""));
        if k != key {
            return Err(Error::format(&path, format!("line {n}: expected `{key}`, found `{k}`")));
        }
        Ok((n, v.to_string()))
    };

    let (_, version) = header(MAGIC)?;
    if version != VERSION.to_string() {
        return Err(Error::format(&path, format!("unsupported version {version}, expected {VERSION}")));
    }
    let (n, v) = header("image_size")?;
    let image_size: usize = parse(&path, n, "image_size", &v)?;
    let (n, v) = header("train_per_class")?;
    let train_per_class = parse(&path, n, "train_per_class", &v)?;
    let (n, v) = header("test_per_class")?;
    let test_per_class = parse(&path, n, "test_per_class", &v)?;
    let (n, v) = header("multi_object")?;
    let multi_object = parse(&path, n, "multi_object", &v)?;
    let (n, v) = header("max_objects")?;
    let max_objects = parse(&path, n, "max_objects", &v)?;
    let (n, v) = header("partition_seed")?;
    let partition_seed = parse(&path, n, "partition_seed", &v)?;
    let (n, v) = header("context_bias")?;
    let context_bias = parse(&path, n, "context_bias", &v)?;
    let (_, v) = header("classes")?;
    let class_names: Vec<String> = v.split(',').map(str::to_string).collect();
    let (n, v) = header("samples")?;
    let count: usize = parse(&path, n, "samples", &v)?;

    let spec = DatasetSpec {
        num_classes: class_names.len(),
        train_per_class,
        test_per_class,
        image_size,
        multi_object,
        max_objects,
        partition_seed,
        context_bias,
    };

    let mut samples = Vec::with_capacity(count);
    for (n, line) in lines.by_ref().take(count) {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 7 {
            return Err(Error::format(&path, format!("line {n}: expected 7 fields, found {}", f.len())));
        }
        let id: usize = parse(&path, n, "id", f[0])?;
        let split = match f[1] {
            "train" => Split::Train,
            "test" => Split::Test,
            other => return Err(Error::format(&path, format!("line {n}: unknown split `{other}`"))),
        };
        let labels = f[2]
            .split(',')
            .map(|l| parse::<usize>(&path, n, "label", l))
            .collect::<Result<Vec<_>>>()?;
        if labels.is_empty() || labels.iter().any(|&l| l >= class_names.len()) {
            return Err(Error::format(&path, format!("line {n}: label out of range")));
        }
        let bg_class: usize = parse(&path, n, "bg_class", f[3])?;
        if bg_class >= super::BACKGROUND_CLASSES.len() {
            return Err(Error::format(&path, format!("line {n}: background class {bg_class} out of range")));
        }
        let seed: u64 = parse(&path, n, "seed", f[4])?;

        let image_path = dir.join(f[5]);
        let rgb = fs::read(&image_path).map_err(|e| Error::io(&image_path, e))?;
        let px = image_size * image_size;
        if rgb.len() != 3 * px {
            return Err(Error::format(
                &image_path,
                format!("expected {} bytes, found {}", 3 * px, rgb.len()),
            ));
        }
        let mut pixels = vec![0u8; 3 * px];
        for i in 0..px {
            for ch in 0..3 {
                pixels[ch * px + i] = rgb[3 * i + ch];
            }
        }
        let (h, w, gt_mask) = read_mask_file(&dir.join(f[6]))?;
        if h != image_size || w != image_size {
            return Err(Error::format(dir.join(f[6]), format!("mask is {h}x{w}, images are {image_size}")));
        }
        samples.push(SceneSample {
            id,
            split,
            labels,
            bg_class,
            seed,
            size: image_size,
            pixels,
            gt_mask,
        });
    }
    if samples.len() != count {
        return Err(Error::format(&path, format!("manifest lists {count} samples, found {}", samples.len())));
    }
    Ok(Dataset {
        spec,
        class_names,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::super::generate;
    use super::*;

    fn dataset() -> Dataset {
        generate(
            &DatasetSpec {
                num_classes: 10,
                train_per_class: 6,
                test_per_class: 4,
                image_size: 16,
                ..DatasetSpec::default()
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let d = dataset();
        assert_eq!(d.samples.len(), 100);
        let dir = tempfile::tempdir().unwrap();
        save(&d, dir.path()).unwrap();
        let back = load(dir.path()).unwrap();
        assert_eq!(back, d);
        let files = fs::read_dir(dir.path().join("images")).unwrap().count();
        let masks = fs::read_dir(dir.path().join("masks")).unwrap().count();
        assert_eq!((files, masks), (100, 100));
    }

    #[test]
    fn corrupted_mask_byte_reports_position() {
        let d = dataset();
        let dir = tempfile::tempdir().unwrap();
        save(&d, dir.path()).unwrap();
        let mask = dir.path().join("masks/000003.mask");
        let mut bytes = fs::read(&mask).unwrap();
        bytes[12 + 37] = 7;
        fs::write(&mask, bytes).unwrap();
        let err = load(dir.path()).unwrap_err().to_string();
        assert!(err.contains("000003.mask"), "{err}");
        assert!(err.contains("offset 37"), "{err}");
    }

    #[test]
    fn version_and_truncation_are_rejected() {
        let d = dataset();
        let dir = tempfile::tempdir().unwrap();
        save(&d, dir.path()).unwrap();
        let img = dir.path().join("images/000000.rgb");
        let bytes = fs::read(&img).unwrap();
        fs::write(&img, &bytes[..10]).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Format { .. })));

        let manifest = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest).unwrap().replacen("dapt-scenes 1", "dapt-scenes 9", 1);
        fs::write(&manifest, text).unwrap();
        let err = load(dir.path()).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }
}
