use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct EcapaConfig {
    pub in_dim: usize,
    pub channels: usize,
    pub res2_scale: usize,
    pub dilations: [usize; 3],
    pub se_bottleneck: usize,
    pub attention_channels: usize,
    pub embed_dim: usize,
    pub stem_kernel: usize,
}

impl EcapaConfig {
    /// The published "small" configuration (C = 512, E = 192).
    pub fn voxceleb(in_dim: usize) -> Self {
        Self {
            in_dim,
            channels: 512,
            res2_scale: 8,
            dilations: [2, 3, 4],
            se_bottleneck: 128,
            attention_channels: 128,
            embed_dim: 192,
            stem_kernel: 5,
        }
    }

    /// Reduced width for CPU experiments (C = 64, E = 64).
    pub fn desk(in_dim: usize) -> Self {
        Self {
            channels: 64,
            se_bottleneck: 32,
            attention_channels: 32,
            embed_dim: 64,
            ..Self::voxceleb(in_dim)
        }
    }

    /// Tiny width used by gradient checks (C = 16).
    pub fn tiny(in_dim: usize) -> Self {
        Self {
            channels: 16,
            res2_scale: 4,
            se_bottleneck: 4,
            attention_channels: 4,
            embed_dim: 6,
            ..Self::voxceleb(in_dim)
        }
    }

    pub fn group_width(&self) -> usize {
        self.channels / self.res2_scale
    }

    pub fn validate(&self) -> Result<()> {
        let checks: [(&str, bool, &str); 8] = [
            ("ecapa.in_dim", self.in_dim >= 1, "must be >= 1"),
            ("ecapa.channels", self.channels >= 1, "must be >= 1"),
            ("ecapa.res2_scale", self.res2_scale >= 2, "must be >= 2"),
            (
                "ecapa.channels",
                self.res2_scale == 0 || self.channels % self.res2_scale == 0,
                "must be divisible by res2_scale",
            ),
            ("ecapa.embed_dim", self.embed_dim >= 1, "must be >= 1"),
            ("ecapa.se_bottleneck", self.se_bottleneck >= 1, "must be >= 1"),
            ("ecapa.attention_channels", self.attention_channels >= 1, "must be >= 1"),
            ("ecapa.stem_kernel", self.stem_kernel % 2 == 1, "must be odd"),
        ];
        for (key, ok, msg) in checks {
            if !ok {
                return Err(Error::config(key, msg));
            }
        }
        if self.dilations.contains(&0) {
            return Err(Error::config("ecapa.dilations", "must be positive"));
        }
        Ok(())
    }

    /// Name and `(rows, cols)` of every trainable tensor.
    pub fn param_shapes(&self) -> Vec<(String, (usize, usize))> {
        let c = self.channels;
        let w = self.group_width();
        let mut v = Vec::new();
        let tdnn = |v: &mut Vec<_>, p: &str, fan_in: usize, out: usize| {
            v.push((format!("{p}.w"), (fan_in, out)));
            v.push((format!("{p}.b"), (1, out)));
            v.push((format!("{p}.norm.g"), (1, out)));
            v.push((format!("{p}.norm.b"), (1, out)));
        };
        tdnn(&mut v, "ecapa.stem", self.stem_kernel * self.in_dim, c);
        for i in 0..3 {
            let p = format!("ecapa.block{i}");
            tdnn(&mut v, &format!("{p}.conv1"), c, c);
            for j in 1..self.res2_scale {
                tdnn(&mut v, &format!("{p}.res2.{j}"), 3 * w, w);
            }
            tdnn(&mut v, &format!("{p}.conv2"), c, c);
            v.push((format!("{p}.se.w1"), (c, self.se_bottleneck)));
            v.push((format!("{p}.se.b1"), (1, self.se_bottleneck)));
            v.push((format!("{p}.se.w2"), (self.se_bottleneck, c)));
            v.push((format!("{p}.se.b2"), (1, c)));
        }
        let mfa = 3 * c;
        v.push(("ecapa.mfa.w".into(), (mfa, mfa)));
        v.push(("ecapa.mfa.b".into(), (1, mfa)));
        v.push(("ecapa.pool.w".into(), (mfa, self.attention_channels)));
        v.push(("ecapa.pool.b".into(), (1, self.attention_channels)));
        v.push(("ecapa.pool.v".into(), (self.attention_channels, 1)));
        v.push(("ecapa.proj.w".into(), (2 * mfa, self.embed_dim)));
        v.push(("ecapa.proj.b".into(), (1, self.embed_dim)));
        v
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, (r, c))| r * c).sum()
    }
}
