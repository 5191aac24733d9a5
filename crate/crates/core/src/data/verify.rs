use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::world::{PALETTE, SHAPES};
use super::{NleExample, Task};
use crate::tokenizer::tokenize;
use crate::vision::Image;

/// An object read back from pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct RecoveredObject {
    pub shape: String,
    pub color: String,
    pub large: bool,
    /// Tight pixel box `[x1, y1, x2, y2)`.
    pub bbox: [usize; 4],
}

fn nearest_color(rgb: [f64; 3]) -> &'static str {
    let d = |c: &[f64; 3]| (0..3).map(|i| (c[i] - rgb[i]) * (c[i] - rgb[i])).sum::<f64>();
    PALETTE.iter().min_by(|a, b| d(&a.1).total_cmp(&d(&b.1))).map(|(n, _)| *n).expect("palette")
}

/// Shape from the filled-pixel mask of one component's bounding box.
fn classify(mask: &[Vec<bool>]) -> &'static str {
    let widths: Vec<usize> = mask.iter().map(|r| r.iter().filter(|&&b| b).count()).collect();
    let area = mask.len() * mask[0].len();
    let fill = widths.iter().sum::<usize>() as f64 / area as f64;
    let widest = *widths.iter().max().expect("non-empty component");
    let (first, last) = (widths[0], widths[widths.len() - 1]);
    if fill > 0.97 {
        SHAPES[0]
    } else if fill > 0.72 {
        SHAPES[1]
    } else if last == widest && first < last {
        SHAPES[2]
    } else {
        SHAPES[3]
    }
}

/// Connected non-black regions of `image`, in scan order of their first pixel.
pub fn recover_objects(image: &Image) -> Vec<RecoveredObject> {
    let (w, h) = (image.width(), image.height());
    let lit = |x: usize, y: usize| image.pixel(x, y).iter().any(|&v| v > 0.0);
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    for y0 in 0..h {
        for x0 in 0..w {
            if seen[y0 * w + x0] || !lit(x0, y0) {
                continue;
            }
            let mut stack = vec![(x0, y0)];
            seen[y0 * w + x0] = true;
            let mut pixels = Vec::new();
            while let Some((x, y)) = stack.pop() {
                pixels.push((x, y));
                let mut visit = |nx: usize, ny: usize| {
                    if !seen[ny * w + nx] && lit(nx, ny) {
                        seen[ny * w + nx] = true;
                        stack.push((nx, ny));
                    }
                };
                if x > 0 {
                    visit(x - 1, y);
                }
                if x + 1 < w {
                    visit(x + 1, y);
                }
                if y > 0 {
                    visit(x, y - 1);
                }
                if y + 1 < h {
                    visit(x, y + 1);
                }
            }
            let x1 = pixels.iter().map(|p| p.0).min().expect("non-empty");
            let x2 = pixels.iter().map(|p| p.0).max().expect("non-empty") + 1;
            let y1 = pixels.iter().map(|p| p.1).min().expect("non-empty");
            let y2 = pixels.iter().map(|p| p.1).max().expect("non-empty") + 1;
            let mut mask = vec![vec![false; x2 - x1]; y2 - y1];
            let mut mean = [0.0; 3];
            for &(x, y) in &pixels {
                mask[y - y1][x - x1] = true;
                let p = image.pixel(x, y);
                for c in 0..3 {
                    mean[c] += p[c] / pixels.len() as f64;
                }
            }
            out.push(RecoveredObject {
                shape: classify(&mask).to_string(),
                color: nearest_color(mean).to_string(),
                large: x2 - x1 >= 9,
                bbox: [x1, y1, x2, y2],
            });
        }
    }
    out
}

fn size_word(large: bool) -> &'static str {
    if large {
        "large"
    } else {
        "small"
    }
}

/// Re-derives every attribute an explanation asserts from the pixels of its
/// image, and checks the answer agrees. Unknown templates are an error.
pub fn verify_example(example: &NleExample, image: &Image) -> Result<(), String> {
    let objs = recover_objects(image);
    let by_shape = |s: &str| objs.iter().find(|o| o.shape == s);
    let expl = example.explanations.first().ok_or("no explanation")?;
    let t = tokenize(expl);
    let t: Vec<&str> = t.iter().map(|s| s.as_str()).collect();
    let answer = example.answers.first().map(|a| a.as_str()).unwrap_or("");
    let fail = |m: String| Err(format!("{}: {m}", example.id));
    if example.task == Task::Nli {
        let h = tokenize(&example.question);
        let ["there", "is", "a", color, shape] = h.iter().map(|s| s.as_str()).collect::<Vec<_>>()[..] else {
            return fail(format!("unrecognized hypothesis {:?}", example.question));
        };
        let label = match by_shape(shape) {
            Some(o) if o.color == color => "entailment",
            Some(_) => "contradiction",
            None => "neutral",
        };
        if answer != label {
            return fail(format!("label {answer} but the image gives {label}"));
        }
    }
    // vqa-style answers must be the asserted attribute; other tasks were checked above
    let answer_is = |attr: &str| example.task != Task::Vqa && example.task != Task::Vcr || answer == attr;
    match t.as_slice() {
        ["the", shape, "is", "large", "and", "the", other, "is", "small"] => {
            match (by_shape(shape), by_shape(other)) {
                (Some(a), Some(b)) if a.large && !b.large && answer == "mixed" => Ok(()),
                _ => fail(format!("sizes of {shape} and {other} disagree with the image")),
            }
        }
        ["all", "objects", "are", size] => {
            if !objs.is_empty() && objs.iter().all(|o| size_word(o.large) == *size) && answer == "uniform" {
                Ok(())
            } else {
                fail(format!("not all objects are {size}"))
            }
        }
        ["the", color, "object", "is", "a", shape] => match objs.iter().find(|o| o.color == *color) {
            Some(o) if o.shape == *shape && answer_is(shape) => Ok(()),
            _ => fail(format!("the {color} object is not a {shape}")),
        },
        ["the", shape, "is", attr] => match by_shape(shape) {
            Some(o) if (o.color == *attr || size_word(o.large) == *attr) && answer_is(attr) => Ok(()),
            _ => fail(format!("the {shape} is not {attr}")),
        },
        ["there", "is", "no", shape] => {
            if by_shape(shape).is_none() {
                Ok(())
            } else {
                fail(format!("there is a {shape}"))
            }
        }
        [reference, "is", "a", color, shape] => {
            let Some(rec) = example.objects.iter().flatten().find(|o| o.reference == *reference) else {
                return fail(format!("{reference} is not an annotated object"));
            };
            let hit = objs.iter().find(|o| (0..4).all(|i| (o.bbox[i] as f64 - rec.bbox[i]).abs() <= 1.0));
            match hit {
                Some(o) if o.color == *color && o.shape == *shape && answer_is(color) => Ok(()),
                _ => fail(format!("{reference} is not a {color} {shape}")),
            }
        }
        _ => fail(format!("unrecognized explanation {expl:?}")),
    }
}
