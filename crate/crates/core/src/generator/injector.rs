use rand::seq::IndexedRandom;
use rand::Rng;

use super::GenError;
use crate::envs::{Embedding, StateSpace, Target};
use crate::oracle::{categorize_with, Category};

/// Replaces valid targets with certified hallucinations at fixed rates.
#[derive(Debug, Clone, PartialEq)]
pub struct HallucinationInjector {
    pub p_g1: f64,
    pub p_g2: f64,
    /// Draw among the `k` candidates nearest the base target; all when `None`.
    pub k: Option<usize>,
    /// Propose G1 embeddings from every possession class, not only the base's.
    pub cross_class: bool,
}

/// One injector draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Injection {
    pub target: Target,
    pub intended: Category,
    /// The intended category was unavailable and a G0 target was returned.
    pub fell_back: bool,
}

impl HallucinationInjector {
    pub fn new(p_g1: f64, p_g2: f64) -> Result<Self, GenError> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        if !ok(p_g1) || !ok(p_g2) || p_g1 + p_g2 > 1.0 {
            return Err(GenError::InvalidRate(p_g1, p_g2));
        }
        Ok(Self {
            p_g1,
            p_g2,
            k: None,
            cross_class: false,
        })
    }

    pub fn with_k(mut self, k: Option<usize>) -> Self {
        self.k = k;
        self
    }

    pub fn with_cross_class(mut self, on: bool) -> Self {
        self.cross_class = on;
        self
    }

    pub fn disabled() -> Self {
        Self {
            p_g1: 0.0,
            p_g2: 0.0,
            k: None,
            cross_class: false,
        }
    }

    /// Embeddings in the base's possession class that no state satisfies: lava
    /// cells and a ring of off-grid positions.
    pub fn g1_candidates(space: &StateSpace, base: &Target) -> Vec<Target> {
        Self::g1_in_class(space, base, base.embedding.class())
    }

    /// [`Self::g1_candidates`] over all four possession classes.
    pub fn g1_candidates_all(space: &StateSpace, base: &Target) -> Vec<Target> {
        (0..4).flat_map(|c| Self::g1_in_class(space, base, c)).collect()
    }

    fn g1_in_class(space: &StateSpace, base: &Target, class: usize) -> Vec<Target> {
        let (w, h) = (space.width as u16, space.height as u16);
        let mut out = Vec::new();
        let mut push = |x: u16, y: u16| {
            let t = Target::new(Embedding::new(x, y, false, false).with_class(class), base.radius);
            if !space.hit_mask(&t).iter().any(|&m| m) {
                out.push(t);
            }
        };
        for y in 0..h {
            for x in 0..w {
                if space.index_of_embedding(&Embedding::new(x, y, false, false).with_class(class)).is_none() {
                    push(x, y);
                }
            }
        }
        let ring = base.radius as u16;
        for y in 0..h {
            push(w + ring, y);
        }
        for x in 0..w {
            push(x, h + ring);
        }
        out
    }

    /// Valid states in lower possession classes that cannot be reached from
    /// `source`.
    pub fn g2_candidates(space: &StateSpace, source: usize, base: &Target, reach: &[bool]) -> Vec<Target> {
        let src = space.state(source).embedding();
        space
            .states()
            .iter()
            .filter(|s| {
                let e = s.embedding();
                (e.has_sword as u8) <= (src.has_sword as u8)
                    && (e.has_shield as u8) <= (src.has_shield as u8)
                    && e.class() != src.class()
            })
            .map(|s| Target::new(s.embedding(), base.radius))
            .filter(|t| categorize_with(&space.hit_mask(t), reach) == Category::G2)
            .collect()
    }

    fn nearest<R: Rng + ?Sized>(&self, mut cands: Vec<Target>, base: &Target, rng: &mut R) -> Option<Target> {
        if let Some(k) = self.k {
            // stable sort keeps enumeration order among equal distances
            cands.sort_by_key(|t| t.embedding.manhattan(&base.embedding));
            cands.truncate(k.max(1));
        }
        cands.choose(rng).copied()
    }

    /// Draws a category by rate and returns a target certified to be in it.
    ///
    /// `base` should be a G0 target for `source`; it is returned unchanged on
    /// the G0 branch and on fallback.
    pub fn inject<R: Rng + ?Sized>(
        &self,
        space: &StateSpace,
        source: usize,
        base: Target,
        rng: &mut R,
    ) -> Injection {
        let u: f64 = rng.random();
        let intended = if u < self.p_g1 {
            Category::G1
        } else if u < self.p_g1 + self.p_g2 {
            Category::G2
        } else {
            Category::G0
        };
        let picked = match intended {
            Category::G0 => return Injection { target: base, intended, fell_back: false },
            Category::G1 => {
                let cands = if self.cross_class {
                    Self::g1_candidates_all(space, &base)
                } else {
                    Self::g1_candidates(space, &base)
                };
                self.nearest(cands, &base, rng)
            }
            Category::G2 => {
                let reach = space.reachable_from(source);
                self.nearest(Self::g2_candidates(space, source, &base, &reach), &base, rng)
            }
        };
        match picked {
            Some(target) => Injection { target, intended, fell_back: false },
            None => {
                let err = if intended == Category::G1 {
                    GenError::G1Unavailable
                } else {
                    GenError::G2Unavailable
                };
                log::debug!("{err} from state {source}; falling back to G0");
                Injection {
                    target: base,
                    intended: Category::G0,
                    fell_back: true,
                }
            }
        }
    }
}
