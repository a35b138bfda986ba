use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::tensor::DType;

/// Optimization settings shared by every run of a comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Square patch edge; must be divisible by the model's size divisor.
    pub patch_size: usize,
    pub lr0: f64,
    /// Nesterov momentum.
    pub momentum: f64,
    pub poly_exponent: f64,
    /// Global gradient-norm bound; 0 disables clipping.
    pub grad_clip: f64,
    pub augment: bool,
    pub dice_eps: f64,
    pub dtype: DType,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 4,
            patch_size: 64,
            lr0: 0.01,
            momentum: 0.99,
            poly_exponent: 0.9,
            grad_clip: 12.0,
            augment: true,
            dice_eps: 1e-5,
            dtype: DType::F32,
            seed: 0,
        }
    }
}

const KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "patch_size",
    "lr0",
    "momentum",
    "poly_exponent",
    "grad_clip",
    "augment",
    "dice_eps",
    "dtype",
    "seed",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 || self.patch_size == 0 {
            return Err(Error::config("batch_size and patch_size must be positive"));
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return Err(Error::config("lr0 must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must be in [0, 1)"));
        }
        if !(self.poly_exponent > 0.0 && self.grad_clip >= 0.0 && self.dice_eps > 0.0) {
            return Err(Error::config("poly_exponent and dice_eps must be positive, grad_clip non-negative"));
        }
        if self.dtype == DType::U8 {
            return Err(Error::config("dtype must be f32 or f64"));
        }
        Ok(())
    }

    /// Checks the patch against a model's input divisor.
    pub fn validate_for(&self, size_divisor: usize) -> Result<()> {
        self.validate()?;
        if self.patch_size % size_divisor != 0 {
            return Err(Error::config(format!(
                "patch_size {} is not divisible by {size_divisor}",
                self.patch_size
            )));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.insert("epochs", self.epochs);
        kv.insert("batch_size", self.batch_size);
        kv.insert("patch_size", self.patch_size);
        kv.insert("lr0", self.lr0);
        kv.insert("momentum", self.momentum);
        kv.insert("poly_exponent", self.poly_exponent);
        kv.insert("grad_clip", self.grad_clip);
        kv.insert("augment", self.augment);
        kv.insert("dice_eps", self.dice_eps);
        kv.insert("dtype", self.dtype.name());
        kv.insert("seed", self.seed);
        kv
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        kv.reject_unknown(KEYS)?;
        let mut c = Self::default();
        macro_rules! field {
            ($($name:ident),*) => {$(
                if let Some(v) = kv.parse_value(stringify!($name))? {
                    c.$name = v;
                }
            )*};
        }
        field!(epochs, batch_size, patch_size, lr0, momentum, poly_exponent, grad_clip, augment, dice_eps, seed);
        if let Some(v) = kv.get("dtype") {
            c.dtype = match v {
                "f32" => DType::F32,
                "f64" => DType::F64,
                _ => return Err(Error::config(format!("`dtype`: expected f32 or f64, got `{v}`"))),
            };
        }
        c.validate()?;
        Ok(c)
    }

    /// SHA-256 of the canonical key=value text.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.to_kv().to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
