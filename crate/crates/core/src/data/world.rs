use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, NleExample, ObjectRecord, Task};
use crate::model::TaskCaps;
use crate::vision::Image;

/// Named colors the renderer knows.
pub const PALETTE: [(&str, [f64; 3]); 8] = [
    ("red", [1.0, 0.0, 0.0]),
    ("green", [0.0, 1.0, 0.0]),
    ("blue", [0.0, 0.0, 1.0]),
    ("yellow", [1.0, 1.0, 0.0]),
    ("white", [1.0, 1.0, 1.0]),
    ("cyan", [0.0, 1.0, 1.0]),
    ("magenta", [1.0, 0.0, 1.0]),
    ("orange", [1.0, 0.5, 0.0]),
];

/// Shapes the renderer knows.
pub const SHAPES: [&str; 4] = ["square", "circle", "triangle", "diamond"];

/// Side of a large and a small object, in pixels.
pub const LARGE: usize = 12;
pub const SMALL: usize = 6;

pub fn palette_rgb(name: &str) -> Option<[f64; 3]> {
    PALETTE.iter().find(|(n, _)| *n == name).map(|(_, c)| *c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    /// Side of the square images; must be a multiple of 2 and at least 16.
    pub image_size: usize,
    pub shapes: Vec<String>,
    pub colors: Vec<String>,
    pub sizes: Vec<String>,
    pub n_images: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub tasks: Vec<Task>,
    /// Probability that the designated shape takes the designated color in training scenes.
    pub bias_strength: f64,
    pub bias_shape: String,
    pub bias_color: String,
    /// Image-level train/val/test fractions.
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            shapes: SHAPES.iter().map(|s| s.to_string()).collect(),
            colors: ["red", "green", "blue", "yellow", "white", "cyan"].iter().map(|s| s.to_string()).collect(),
            sizes: vec!["small".into(), "large".into()],
            n_images: 600,
            min_objects: 2,
            max_objects: 3,
            tasks: vec![Task::Vqa],
            bias_strength: 0.0,
            bias_shape: "circle".into(),
            bias_color: "yellow".into(),
            ratios: [0.8, 0.1, 0.1],
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::World(m));
        if self.image_size < 16 || self.image_size % 2 != 0 {
            return bad(format!("image size {} must be even and at least 16", self.image_size));
        }
        if self.shapes.is_empty() || self.colors.is_empty() || self.tasks.is_empty() {
            return bad("shape, color and task lists must be non-empty".into());
        }
        if self.sizes != ["small", "large"] {
            return bad("sizes must be [\"small\", \"large\"]".into());
        }
        if let Some(s) = self.shapes.iter().find(|s| !SHAPES.contains(&s.as_str())) {
            return bad(format!("unknown shape {s:?}"));
        }
        if let Some(c) = self.colors.iter().find(|c| palette_rgb(c).is_none()) {
            return bad(format!("unknown color {c:?}"));
        }
        let distinct = |v: &[String]| v.iter().collect::<BTreeSet<_>>().len() == v.len();
        if !distinct(&self.shapes) || !distinct(&self.colors) {
            return bad("shapes and colors must be distinct".into());
        }
        let most = self.shapes.len().min(self.colors.len()).min(4);
        if self.min_objects == 0 || self.min_objects > self.max_objects || self.max_objects > most {
            return bad(format!("object count range {}..={} not in 1..={most}", self.min_objects, self.max_objects));
        }
        if !(0.0..=1.0).contains(&self.bias_strength) {
            return bad(format!("bias strength {} outside [0, 1]", self.bias_strength));
        }
        if !self.shapes.contains(&self.bias_shape) || !self.colors.contains(&self.bias_color) {
            return bad("bias shape and color must be in the vocabularies".into());
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.ratios.iter().any(|r| *r < 0.0) {
            return bad(format!("ratios {:?} must be non-negative and sum to 1", self.ratios));
        }
        let capacity = self.scene_capacity();
        if self.n_images > capacity {
            return bad(format!("{} images requested but only {capacity} distinct scenes exist", self.n_images));
        }
        Ok(())
    }

    /// Number of distinct scenes: cells, shapes and colors all distinct, any sizes.
    pub fn scene_capacity(&self) -> usize {
        let perm = |n: usize, k: usize| (0..k).map(|i| n.saturating_sub(i)).product::<usize>();
        let choose = |n: usize, k: usize| perm(n, k) / perm(k, k);
        (self.min_objects..=self.max_objects)
            .map(|k| choose(4, k) * perm(self.shapes.len(), k) * perm(self.colors.len(), k) * (1 << k))
            .sum()
    }

    /// Concept vocabulary: colors, then shapes, then sizes.
    pub fn concept_vocabulary(&self) -> Vec<String> {
        self.colors.iter().chain(&self.shapes).chain(&self.sizes).cloned().collect()
    }

    fn cell_side(&self) -> usize {
        self.image_size / 2
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SceneObject {
    /// Grid cell 0..4, row-major over the 2×2 layout.
    pub cell: usize,
    pub shape: String,
    pub color: String,
    pub large: bool,
    /// Top-left pixel of the object's box.
    pub x: usize,
    pub y: usize,
}

impl SceneObject {
    pub fn side(&self) -> usize {
        if self.large {
            LARGE
        } else {
            SMALL
        }
    }

    pub fn size_word(&self) -> &'static str {
        if self.large {
            "large"
        } else {
            "small"
        }
    }

    pub fn bbox(&self) -> [f64; 4] {
        let s = self.side() as f64;
        [self.x as f64, self.y as f64, self.x as f64 + s, self.y as f64 + s]
    }

    /// Whether pixel `(px, py)` belongs to the object.
    pub fn covers(&self, px: usize, py: usize) -> bool {
        let s = self.side();
        if px < self.x || py < self.y || px >= self.x + s || py >= self.y + s {
            return false;
        }
        let (dx, dy) = ((px - self.x) as f64 + 0.5, (py - self.y) as f64 + 0.5);
        let c = s as f64 / 2.0;
        match self.shape.as_str() {
            "circle" => (dx - c) * (dx - c) + (dy - c) * (dy - c) <= c * c,
            // apex at the top, base along the bottom row
            "triangle" => (dx - c).abs() <= dy / 2.0,
            "diamond" => (dx - c).abs() + (dy - c).abs() <= c,
            _ => true,
        }
    }
}

/// One image's ground truth. Objects are ordered by cell.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
}

impl Scene {
    pub fn render(&self, size: usize) -> Image {
        let mut img = Image::filled(size, size, [0.0; 3]);
        for o in &self.objects {
            let rgb = palette_rgb(&o.color).expect("validated color");
            for py in o.y..o.y + o.side() {
                for px in o.x..o.x + o.side() {
                    if o.covers(px, py) {
                        img.set_pixel(px, py, rgb);
                    }
                }
            }
        }
        img
    }

    pub fn object_with_shape(&self, shape: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.shape == shape)
    }

    pub fn object_with_color(&self, color: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.color == color)
    }

    /// Colors, shapes and sizes present, in concept-vocabulary order.
    pub fn concepts(&self, config: &WorldConfig) -> Vec<String> {
        config
            .concept_vocabulary()
            .into_iter()
            .filter(|c| self.objects.iter().any(|o| o.color == *c || o.shape == *c || o.size_word() == c))
            .collect()
    }

    pub fn caption(&self) -> String {
        let parts: Vec<String> =
            self.objects.iter().map(|o| format!("a {} {} {}", o.size_word(), o.color, o.shape)).collect();
        parts.join(" and ")
    }
}

/// One rendered image with its scene and caption.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldImage {
    pub id: String,
    pub scene: Scene,
    pub image: Image,
    pub caption: String,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct WorldSplit {
    pub images: Vec<WorldImage>,
    pub examples: Vec<NleExample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldManifest {
    /// Example counts per split.
    pub counts: SplitCounts,
    pub images: SplitCounts,
    pub seed: u64,
    pub bias_strength: f64,
    pub caps: TaskCaps,
    pub concepts: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub config: WorldConfig,
    pub train: WorldSplit,
    pub val: WorldSplit,
    pub test: WorldSplit,
}

impl World {
    pub fn manifest(&self) -> WorldManifest {
        WorldManifest {
            counts: SplitCounts {
                train: self.train.examples.len(),
                val: self.val.examples.len(),
                test: self.test.examples.len(),
            },
            images: SplitCounts {
                train: self.train.images.len(),
                val: self.val.images.len(),
                test: self.test.images.len(),
            },
            seed: self.config.seed,
            bias_strength: self.config.bias_strength,
            caps: TaskCaps::default(),
            concepts: self.config.concept_vocabulary(),
        }
    }

    pub fn splits(&self) -> [(&'static str, &WorldSplit); 3] {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
    }

    pub fn find_image(&self, id: &str) -> Option<&WorldImage> {
        self.splits().into_iter().flat_map(|(_, s)| s.images.iter()).find(|i| i.id == id)
    }
}

/// Image-relative path stored in each example's `image` field.
pub fn image_path(id: &str) -> String {
    format!("images/{id}.ppm")
}

/// Image id of an example, recovered from its `image` field.
pub fn image_id(image_field: &str) -> &str {
    let name = image_field.rsplit('/').next().unwrap_or(image_field);
    name.strip_suffix(".ppm").unwrap_or(name)
}

fn sample_scene<R: Rng>(cfg: &WorldConfig, rng: &mut R) -> Scene {
    let k = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let mut cells: Vec<usize> = (0..4).collect();
    cells.shuffle(rng);
    let shapes: Vec<&String> = cfg.shapes.choose_multiple(rng, k).collect();
    let colors: Vec<&String> = cfg.colors.choose_multiple(rng, k).collect();
    let side = cfg.cell_side();
    let mut objects: Vec<SceneObject> = (0..k)
        .map(|i| {
            let large = rng.random_bool(0.5);
            let s = if large { LARGE } else { SMALL };
            // keep a one-pixel margin inside the cell so objects never touch
            let span = side - s - 1;
            let (cx, cy) = ((cells[i] % 2) * side, (cells[i] / 2) * side);
            SceneObject {
                cell: cells[i],
                shape: shapes[i].clone(),
                color: colors[i].clone(),
                large,
                x: cx + rng.random_range(1..=span),
                y: cy + rng.random_range(1..=span),
            }
        })
        .collect();
    objects.sort();
    Scene { objects }
}

/// Gives the bias shape the bias color with probability `b`, swapping colors
/// with whichever object held it.
fn apply_bias<R: Rng>(cfg: &WorldConfig, scene: &mut Scene, rng: &mut R) {
    let Some(i) = scene.objects.iter().position(|o| o.shape == cfg.bias_shape) else {
        return;
    };
    if !rng.random_bool(cfg.bias_strength) {
        return;
    }
    let old = scene.objects[i].color.clone();
    if let Some(j) = scene.objects.iter().position(|o| o.color == cfg.bias_color) {
        scene.objects[j].color = old;
    }
    scene.objects[i].color = cfg.bias_color.clone();
}

fn question_for<R: Rng>(task: Task, scene: &Scene, rng: &mut R) -> (String, String, String) {
    let objs = &scene.objects;
    match task {
        Task::Vqa => {
            let o = objs.choose(rng).expect("scene has objects");
            match rng.random_range(0..3) {
                0 => (format!("what color is the {}?", o.shape), o.color.clone(), format!("the {} is {}", o.shape, o.color)),
                1 => (
                    format!("what shape is the {} object?", o.color),
                    o.shape.clone(),
                    format!("the {} object is a {}", o.color, o.shape),
                ),
                _ => (format!("how big is the {}?", o.shape), o.size_word().into(), format!("the {} is {}", o.shape, o.size_word())),
            }
        }
        Task::Act => {
            let large: Vec<&SceneObject> = objs.iter().filter(|o| o.large).collect();
            let small: Vec<&SceneObject> = objs.iter().filter(|o| !o.large).collect();
            match (large.first(), small.first()) {
                (Some(l), Some(s)) => (
                    String::new(),
                    "mixed".into(),
                    format!("the {} is large and the {} is small", l.shape, s.shape),
                ),
                (Some(_), None) => (String::new(), "uniform".into(), "all objects are large".into()),
                _ => (String::new(), "uniform".into(), "all objects are small".into()),
            }
        }
        Task::Nli | Task::Vcr => unreachable!("handled by their own builders"),
    }
}

fn nli_example<R: Rng>(cfg: &WorldConfig, scene: &Scene, rng: &mut R) -> (String, String, String) {
    let shape = cfg.shapes.choose(rng).expect("non-empty").clone();
    let color = cfg.colors.choose(rng).expect("non-empty").clone();
    let hypothesis = format!("there is a {color} {shape}");
    match scene.object_with_shape(&shape) {
        Some(o) if o.color == color => (hypothesis, "entailment".into(), format!("the {shape} is {color}")),
        Some(o) => (hypothesis, "contradiction".into(), format!("the {shape} is {}", o.color)),
        None => (hypothesis, "neutral".into(), format!("there is no {shape}")),
    }
}

fn vcr_example<R: Rng>(scene: &Scene, rng: &mut R) -> (String, String, String, Vec<ObjectRecord>) {
    let objects: Vec<ObjectRecord> = scene
        .objects
        .iter()
        .enumerate()
        .map(|(i, o)| ObjectRecord { label: o.shape.clone(), reference: format!("obj{}", i + 1), bbox: o.bbox() })
        .collect();
    let i = rng.random_range(0..scene.objects.len());
    let o = &scene.objects[i];
    (
        format!("what color is obj{}?", i + 1),
        o.color.clone(),
        format!("obj{} is a {} {}", i + 1, o.color, o.shape),
        objects,
    )
}

fn build_split(
    cfg: &WorldConfig,
    name: &str,
    n: usize,
    biased: bool,
    rng: &mut ChaCha8Rng,
    bias_rng: &mut ChaCha8Rng,
    seen: &mut BTreeSet<Scene>,
    next_id: &mut usize,
) -> WorldSplit {
    let mut split = WorldSplit::default();
    while split.images.len() < n {
        let mut scene = sample_scene(cfg, rng);
        if biased {
            apply_bias(cfg, &mut scene, bias_rng);
        }
        if !seen.insert(scene.clone()) {
            continue;
        }
        let id = format!("img{:05}", *next_id);
        *next_id += 1;
        let concepts = scene.concepts(cfg);
        for &task in &cfg.tasks {
            let (question, answer, explanation, objects) = match task {
                Task::Vqa | Task::Act => {
                    let (q, a, e) = question_for(task, &scene, rng);
                    (q, a, e, None)
                }
                Task::Nli => {
                    let (q, a, e) = nli_example(cfg, &scene, rng);
                    (q, a, e, None)
                }
                Task::Vcr => {
                    let (q, a, e, o) = vcr_example(&scene, rng);
                    (q, a, e, Some(o))
                }
            };
            split.examples.push(NleExample {
                id: format!("{name}-{id}-{task}"),
                task,
                image: image_path(&id),
                question,
                answers: vec![answer],
                explanations: vec![explanation],
                concepts: Some(concepts.clone()),
                objects,
            });
        }
        split.images.push(WorldImage { image: scene.render(cfg.image_size), caption: scene.caption(), scene, id });
    }
    split
}

/// Renders `n_images` distinct scenes and their examples. Training scenes
/// carry the bias; validation and test scenes never do. The bias coin uses
/// its own random stream, so worlds differing only in bias strength share
/// every other draw until a duplicate scene is rejected.
pub fn generate_world(cfg: &WorldConfig) -> Result<World, DataError> {
    cfg.validate()?;
    let n_train = libm::round(cfg.ratios[0] * cfg.n_images as f64) as usize;
    let n_val = libm::round(cfg.ratios[1] * cfg.n_images as f64) as usize;
    let n_test = cfg.n_images.saturating_sub(n_train + n_val);
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(DataError::Split(format!(
            "{} images at ratios {:?} leave an empty split",
            cfg.n_images, cfg.ratios
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut bias_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    bias_rng.set_stream(1);
    let mut seen = BTreeSet::new();
    let mut next = 0;
    let train = build_split(cfg, "train", n_train, true, &mut rng, &mut bias_rng, &mut seen, &mut next);
    let val = build_split(cfg, "val", n_val, false, &mut rng, &mut bias_rng, &mut seen, &mut next);
    let test = build_split(cfg, "test", n_test, false, &mut rng, &mut bias_rng, &mut seen, &mut next);
    Ok(World { config: cfg.clone(), train, val, test })
}
