use crate::adapters::DescriptorSet;
use crate::error::{Error, Result};
use crate::nn::{
    init_network, Activation, Cache, GradientSet, LayerSpec, Network, NetworkSpec, SharedCache,
    Shape,
};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ActorKind {
    Vector,
    Separate,
    Descriptor,
}

impl ActorKind {
    pub const ALL: [ActorKind; 3] = [ActorKind::Vector, ActorKind::Separate, ActorKind::Descriptor];

    pub fn name(self) -> &'static str {
        match self {
            ActorKind::Vector => "ddpg",
            ActorKind::Separate => "separate",
            ActorKind::Descriptor => "descriptor",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "ddpg" | "vector" => Ok(ActorKind::Vector),
            "separate" | "ddpg_separate" => Ok(ActorKind::Separate),
            "descriptor" | "ddpg_descriptor" => Ok(ActorKind::Descriptor),
            _ => Err(Error::Config(format!("unknown actor variant {s:?}"))),
        }
    }
}

/// Affine map from a network output to an action scalar, `u = offset + gain * y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputMap {
    pub offset: f64,
    pub gain: f64,
}

impl OutputMap {
    pub const IDENTITY: OutputMap = OutputMap {
        offset: 0.0,
        gain: 1.0,
    };

    /// Stretches the activation's range onto `[low, high]`. Linear outputs
    /// are passed through unchanged.
    pub fn for_range(activation: Activation, low: f64, high: f64) -> Self {
        match activation {
            Activation::Tanh => OutputMap {
                offset: 0.5 * (low + high),
                gain: 0.5 * (high - low),
            },
            Activation::Sigmoid => OutputMap {
                offset: low,
                gain: high - low,
            },
            Activation::Relu | Activation::Linear => Self::IDENTITY,
        }
    }

    #[inline]
    fn apply(&self, y: f64) -> f64 {
        self.offset + self.gain * y
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Nets {
    Vector(Network),
    Separate { trunk: Network, heads: Vec<Network> },
    Descriptor(Network),
}

/// Deterministic policy producing `k` action scalars for a state.
#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    nets: Nets,
    map: OutputMap,
    k: usize,
}

#[derive(Debug, Clone)]
pub enum ActorCache {
    Vector(Cache),
    Separate { trunk: Cache, heads: Vec<Cache> },
    Descriptor(SharedCache),
}

/// Gradients for each network of an actor, in [`Actor::networks`] order.
pub type ActorGrads = Vec<GradientSet>;

impl Actor {
    /// Dense actor for `inputs` state features. For `Separate`, the first
    /// entry of `hidden` is the shared trunk width.
    pub fn new(
        kind: ActorKind,
        inputs: usize,
        c: &DescriptorSet,
        hidden: &[usize],
        output: Activation,
        map: OutputMap,
        rng: &mut Rng,
    ) -> Result<Self> {
        let k = c.len();
        let nets = match kind {
            ActorKind::Vector => Nets::Vector(init_network(
                &NetworkSpec::dense(inputs, 0, hidden, k, output),
                rng,
            )?),
            ActorKind::Descriptor => Nets::Descriptor(init_network(
                &NetworkSpec::dense(inputs, c.dim(), hidden, 1, output),
                rng,
            )?),
            ActorKind::Separate => {
                let (&width, rest) = hidden
                    .split_first()
                    .ok_or_else(|| Error::Config("separate actor needs a trunk layer".into()))?;
                let trunk = init_network(
                    &NetworkSpec {
                        input: Shape::Flat(inputs),
                        aux_width: 0,
                        layers: vec![LayerSpec::Dense {
                            outputs: width,
                            activation: Activation::Relu,
                        }],
                        small_final: false,
                    },
                    rng,
                )?;
                let head_spec = NetworkSpec::dense(width, 0, rest, 1, output);
                let heads = (0..k)
                    .map(|_| init_network(&head_spec, rng))
                    .collect::<Result<_>>()?;
                Nets::Separate { trunk, heads }
            }
        };
        Ok(Self { nets, map, k })
    }

    pub fn vector(net: Network, map: OutputMap) -> Result<Self> {
        if net.aux_width() != 0 {
            return Err(Error::Config("vector actor takes no auxiliary input".into()));
        }
        let k = net.output_size();
        Ok(Self {
            nets: Nets::Vector(net),
            map,
            k,
        })
    }

    pub fn separate(trunk: Network, heads: Vec<Network>, map: OutputMap) -> Result<Self> {
        let width = trunk.output_size();
        for h in &heads {
            if h.input_shape() != Shape::Flat(width) || h.output_size() != 1 || h.aux_width() != 0 {
                return Err(Error::Dimension("head does not fit the trunk".into()));
            }
        }
        let k = heads.len();
        Ok(Self {
            nets: Nets::Separate { trunk, heads },
            map,
            k,
        })
    }

    pub fn descriptor(net: Network, k: usize, map: OutputMap) -> Result<Self> {
        if net.output_size() != 1 || net.aux_width() == 0 {
            return Err(Error::Config(
                "descriptor actor needs a scalar output and a descriptor input".into(),
            ));
        }
        Ok(Self {
            nets: Nets::Descriptor(net),
            map,
            k,
        })
    }

    pub fn kind(&self) -> ActorKind {
        match self.nets {
            Nets::Vector(_) => ActorKind::Vector,
            Nets::Separate { .. } => ActorKind::Separate,
            Nets::Descriptor(_) => ActorKind::Descriptor,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn map(&self) -> OutputMap {
        self.map
    }

    pub fn networks(&self) -> Vec<&Network> {
        match &self.nets {
            Nets::Vector(n) | Nets::Descriptor(n) => vec![n],
            Nets::Separate { trunk, heads } => std::iter::once(trunk).chain(heads).collect(),
        }
    }

    fn networks_mut(&mut self) -> Vec<&mut Network> {
        match &mut self.nets {
            Nets::Vector(n) | Nets::Descriptor(n) => vec![n],
            Nets::Separate { trunk, heads } => std::iter::once(trunk).chain(heads.iter_mut()).collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.networks().iter().map(|n| n.param_count()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.networks().iter().flat_map(|n| n.flat_params()).collect()
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::Dimension("actor parameter vector length".into()));
        }
        let mut offset = 0;
        for net in self.networks_mut() {
            let n = net.param_count();
            net.set_flat_params(&values[offset..offset + n])?;
            offset += n;
        }
        Ok(())
    }

    fn check_descriptors(&self, c: &DescriptorSet) -> Result<()> {
        if c.len() != self.k {
            return Err(Error::Dimension(format!(
                "actor emits {} scalars but {} descriptors were given",
                self.k,
                c.len()
            )));
        }
        Ok(())
    }

    /// Deterministic action scalars for the flattened state `x`.
    pub fn act(&self, x: &[f64], c: &DescriptorSet) -> Result<Vec<f64>> {
        self.check_descriptors(c)?;
        let y = match &self.nets {
            Nets::Vector(net) => net.predict(x, &[])?,
            Nets::Separate { trunk, heads } => {
                let h = trunk.predict(x, &[])?;
                heads
                    .iter()
                    .map(|head| head.predict(&h, &[]).map(|o| o[0]))
                    .collect::<Result<_>>()?
            }
            Nets::Descriptor(net) => {
                let auxes: Vec<&[f64]> = c.iter().collect();
                let (outs, _) = net.forward_shared(x, &auxes)?;
                outs.into_iter().map(|o| o[0]).collect()
            }
        };
        Ok(y.into_iter().map(|v| self.map.apply(v)).collect())
    }

    pub fn forward(&self, x: &[f64], c: &DescriptorSet) -> Result<(Vec<f64>, ActorCache)> {
        self.check_descriptors(c)?;
        let (y, cache) = match &self.nets {
            Nets::Vector(net) => {
                let (y, cache) = net.forward(x, &[])?;
                (y, ActorCache::Vector(cache))
            }
            Nets::Separate { trunk, heads } => {
                let (h, tc) = trunk.forward(x, &[])?;
                let mut y = Vec::with_capacity(heads.len());
                let mut hc = Vec::with_capacity(heads.len());
                for head in heads {
                    let (o, cache) = head.forward(&h, &[])?;
                    y.push(o[0]);
                    hc.push(cache);
                }
                (y, ActorCache::Separate { trunk: tc, heads: hc })
            }
            Nets::Descriptor(net) => {
                let auxes: Vec<&[f64]> = c.iter().collect();
                let (outs, cache) = net.forward_shared(x, &auxes)?;
                (outs.into_iter().map(|o| o[0]).collect(), ActorCache::Descriptor(cache))
            }
        };
        Ok((y.into_iter().map(|v| self.map.apply(v)).collect(), cache))
    }

    /// Parameter gradients of `upstream . u`.
    pub fn backward(&self, cache: &ActorCache, upstream: &[f64]) -> Result<ActorGrads> {
        if upstream.len() != self.k {
            return Err(Error::Dimension("actor upstream length".into()));
        }
        let dy: Vec<f64> = upstream.iter().map(|g| g * self.map.gain).collect();
        match (&self.nets, cache) {
            (Nets::Vector(net), ActorCache::Vector(c)) => Ok(vec![net.backward(c, &dy)?]),
            (Nets::Separate { trunk, heads }, ActorCache::Separate { trunk: tc, heads: hc }) => {
                let mut out = Vec::with_capacity(heads.len() + 1);
                let mut dh = vec![0.0; trunk.output_size()];
                let mut head_grads = Vec::with_capacity(heads.len());
                for ((head, c), g) in heads.iter().zip(hc).zip(&dy) {
                    let grads = head.backward(c, &[*g])?;
                    dh.iter_mut().zip(&grads.input).for_each(|(a, b)| *a += b);
                    head_grads.push(grads);
                }
                out.push(trunk.backward(tc, &dh)?);
                out.extend(head_grads);
                Ok(out)
            }
            (Nets::Descriptor(net), ActorCache::Descriptor(c)) => {
                let ups: Vec<Vec<f64>> = dy.iter().map(|g| vec![*g]).collect();
                Ok(vec![net.backward_shared(c, &ups)?.0])
            }
            _ => Err(Error::Contract("cache belongs to a different actor variant".into())),
        }
    }

    pub fn zero_grads(&self) -> ActorGrads {
        self.networks().into_iter().map(GradientSet::zeros_like).collect()
    }

    /// Plain SGD descent step on every network.
    pub fn apply_update(&mut self, grads: &ActorGrads, lr: f64) -> Result<()> {
        let nets = self.networks_mut();
        if nets.len() != grads.len() {
            return Err(Error::Dimension("actor gradient count".into()));
        }
        for (net, g) in nets.into_iter().zip(grads) {
            net.apply_update(g, lr, 0.0)?;
        }
        Ok(())
    }

    pub fn soft_update_from(&mut self, source: &Actor, tau: f64) -> Result<()> {
        let src = source.networks();
        let dst = self.networks_mut();
        if src.len() != dst.len() {
            return Err(Error::Dimension("actors differ in structure".into()));
        }
        for (d, s) in dst.into_iter().zip(src) {
            d.soft_update_from(s, tau)?;
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) fn flatten_grads(grads: &ActorGrads) -> Vec<f64> {
    grads.iter().flat_map(|g| g.flat()).collect()
}
