//! FER-2013 CSV ingestion.
//!
//! Format: header `emotion,pixels,Usage`; `pixels` holds 2304 space-separated
//! bytes (48x48 row-major); `Usage` is `Training`, `PublicTest` or `PrivateTest`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::image::{GrayImage, FACE_SIZE};
use super::{Dataset, EmotionLabel, Sample, Split};
use crate::error::{Error, Result};

const PIXELS: usize = FACE_SIZE * FACE_SIZE;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Usage {
    Training,
    PublicTest,
    PrivateTest,
}

impl Usage {
    pub fn as_str(self) -> &'static str {
        match self {
            Usage::Training => "Training",
            Usage::PublicTest => "PublicTest",
            Usage::PrivateTest => "PrivateTest",
        }
    }
}

/// The train split and the combined test split. Test samples keep file order
/// within each usage tag, public before private.
#[derive(Clone, Debug)]
pub struct FerSplits {
    pub train: Dataset,
    pub test: Dataset,
    pub public_test_len: usize,
}

impl FerSplits {
    pub fn public_test(&self) -> &[Sample] {
        &self.test.samples[..self.public_test_len]
    }

    pub fn private_test(&self) -> &[Sample] {
        &self.test.samples[self.public_test_len..]
    }
}

pub fn load_fer_csv(path: impl AsRef<Path>) -> Result<FerSplits> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_fer_csv(file)
}

pub fn parse_fer_csv<R: Read>(reader: R) -> Result<FerSplits> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = csv.headers().map_err(|e| parse_err(1, e))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Parse {
                row: 1,
                message: format!("missing column {name:?}"),
            })
    };
    let (c_emotion, c_pixels, c_usage) = (column("emotion")?, column("pixels")?, column("Usage")?);

    let mut train = Vec::new();
    let mut public = Vec::new();
    let mut private = Vec::new();
    for (i, record) in csv.records().enumerate() {
        // Header is row 1.
        let row = i as u64 + 2;
        let record = record.map_err(|e| parse_err(row, e))?;
        let field = |c: usize| {
            record.get(c).map(str::trim).ok_or_else(|| Error::Parse {
                row,
                message: "missing field".into(),
            })
        };
        let label = field(c_emotion)?
            .parse::<usize>()
            .ok()
            .and_then(|i| EmotionLabel::from_index(i).ok())
            .ok_or_else(|| Error::Parse {
                row,
                message: format!("invalid emotion {:?}", record.get(c_emotion).unwrap_or("")),
            })?;
        let pixels = field(c_pixels)?
            .split_ascii_whitespace()
            .map(|p| p.parse::<u8>())
            .collect::<std::result::Result<Vec<u8>, _>>()
            .map_err(|e| Error::Parse {
                row,
                message: format!("bad pixel value: {e}"),
            })?;
        if pixels.len() != PIXELS {
            return Err(Error::Count {
                row,
                expected: PIXELS,
                found: pixels.len(),
            });
        }
        let sample = Sample {
            image: GrayImage::new(FACE_SIZE, FACE_SIZE, pixels)?,
            label,
        };
        match field(c_usage)? {
            "Training" => train.push(sample),
            "PublicTest" => public.push(sample),
            "PrivateTest" => private.push(sample),
            other => {
                return Err(Error::Parse {
                    row,
                    message: format!("unknown Usage {other:?}"),
                })
            }
        }
    }
    let public_test_len = public.len();
    public.extend(private);
    Ok(FerSplits {
        train: Dataset::new(Split::Train, train),
        test: Dataset::new(Split::Test, public),
        public_test_len,
    })
}

fn parse_err(row: u64, e: csv::Error) -> Error {
    Error::Parse {
        row,
        message: e.to_string(),
    }
}

/// Writes samples in the FER-2013 CSV layout, all tagged with `usage`.
pub fn write_fer_csv<'a, W: Write>(
    writer: W,
    samples: impl IntoIterator<Item = (&'a Sample, Usage)>,
) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    let to_err = |e: csv::Error| Error::Data(format!("csv write failed: {e}"));
    csv.write_record(["emotion", "pixels", "Usage"]).map_err(to_err)?;
    for (sample, usage) in samples {
        let pixels = sample
            .image
            .pixels()
            .iter()
            .map(|p| p.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        csv.write_record([sample.label.index().to_string(), pixels, usage.as_str().to_string()])
            .map_err(to_err)?;
    }
    csv.flush().map_err(|e| Error::Data(format!("csv write failed: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(label: usize, px: &str, usage: &str) -> String {
        format!("{label},{px},{usage}\n")
    }

    fn pixels(n: usize, v: u8) -> String {
        vec![v.to_string(); n].join(" ")
    }

    #[test]
    fn two_row_fixture() {
        let text = format!(
            "emotion,pixels,Usage\n{}{}",
            row(3, &pixels(2304, 7), "Training"),
            row(6, &pixels(2304, 200), "PublicTest")
        );
        let splits = parse_fer_csv(text.as_bytes()).unwrap();
        assert_eq!((splits.train.len(), splits.test.len()), (1, 1));
        assert_eq!(splits.train.samples[0].label, EmotionLabel::Happy);
        assert_eq!(splits.test.samples[0].image.get(47, 47), 200);
        assert_eq!(splits.public_test().len(), 1);
        assert!(splits.private_test().is_empty());
    }

    #[test]
    fn pixel_count_mismatch() {
        let text = format!("emotion,pixels,Usage\n{}", row(0, &pixels(2303, 1), "Training"));
        assert!(matches!(
            parse_fer_csv(text.as_bytes()),
            Err(Error::Count { row: 2, found: 2303, .. })
        ));
    }

    #[test]
    fn malformed_rows_report_row_numbers() {
        let good = row(0, &pixels(2304, 1), "Training");
        let text = format!("emotion,pixels,Usage\n{good}{}", row(9, &pixels(2304, 1), "Training"));
        assert!(matches!(parse_fer_csv(text.as_bytes()), Err(Error::Parse { row: 3, .. })));
        let text = format!("emotion,pixels,Usage\n{good}{good}{}", row(1, &pixels(2304, 1), "Holdout"));
        assert!(matches!(parse_fer_csv(text.as_bytes()), Err(Error::Parse { row: 4, .. })));
        let text = format!("emotion,pixels,Usage\n{}", row(1, &pixels(2304, 1).replace(" 1 ", " 300 "), "Training"));
        assert!(matches!(parse_fer_csv(text.as_bytes()), Err(Error::Parse { row: 2, .. })));
        assert!(matches!(parse_fer_csv("a,b\n".as_bytes()), Err(Error::Parse { row: 1, .. })));
    }

    #[test]
    fn write_then_parse() {
        let splits = parse_fer_csv(
            format!(
                "emotion,pixels,Usage\n{}{}",
                row(1, &pixels(2304, 3), "Training"),
                row(5, &pixels(2304, 4), "PrivateTest")
            )
            .as_bytes(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_fer_csv(
            &mut buf,
            splits
                .train
                .samples
                .iter()
                .map(|s| (s, Usage::Training))
                .chain(splits.test.samples.iter().map(|s| (s, Usage::PrivateTest))),
        )
        .unwrap();
        let again = parse_fer_csv(buf.as_slice()).unwrap();
        assert_eq!(again.train.samples, splits.train.samples);
        assert_eq!(again.test.samples, splits.test.samples);
        assert_eq!(again.public_test_len, 0);
    }
}
