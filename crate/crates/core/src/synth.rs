//! Random block-structured choreographies for property tests.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{ChoreographyModel, ModelBuilder};

#[derive(Debug, Clone)]
enum Block {
    Task,
    Seq(Vec<Block>),
    Xor(Vec<Block>),
    And(Vec<Block>),
    Loop(Box<Block>),
}

#[derive(Debug, Clone, Copy)]
pub struct SynthParams {
    pub max_tasks: usize,
    pub max_depth: usize,
    pub max_roles: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams { max_tasks: 8, max_depth: 3, max_roles: 4 }
    }
}

fn gen_block(rng: &mut ChaCha8Rng, budget: &mut usize, depth: usize) -> Block {
    if *budget <= 1 || depth == 0 || rng.random_bool(0.3) {
        *budget = budget.saturating_sub(1);
        return Block::Task;
    }
    let arity = rng.random_range(2..=3usize);
    match rng.random_range(0..4u8) {
        0 => Block::Seq((0..arity).map(|_| gen_block(rng, budget, depth - 1)).collect()),
        1 => Block::Xor((0..arity).map(|_| gen_block(rng, budget, depth - 1)).collect()),
        2 => Block::And((0..arity).map(|_| gen_block(rng, budget, depth - 1)).collect()),
        _ => Block::Loop(Box::new(gen_block(rng, budget, depth - 1))),
    }
}

struct Emitter<'a> {
    builder: ModelBuilder,
    rng: &'a mut ChaCha8Rng,
    roles: usize,
    next: usize,
}

impl Emitter<'_> {
    fn fresh(&mut self, prefix: &str) -> String {
        self.next += 1;
        format!("{prefix}{}", self.next)
    }

    fn take(&mut self, f: impl FnOnce(ModelBuilder) -> ModelBuilder) {
        let b = std::mem::replace(&mut self.builder, ModelBuilder::new(""));
        self.builder = f(b);
    }

    /// Emits a block and returns its entry and exit node ids.
    fn emit(&mut self, block: &Block) -> (String, String) {
        match block {
            Block::Task => {
                let id = self.fresh("t");
                let a = self.rng.random_range(0..self.roles);
                let b = (a + self.rng.random_range(1..self.roles)) % self.roles;
                let (ra, rb) = (format!("R{a}"), format!("R{b}"));
                self.take(|m| m.task(&id, &ra, &rb));
                (id.clone(), id)
            }
            Block::Seq(parts) => {
                let spans: Vec<_> = parts.iter().map(|p| self.emit(p)).collect();
                for w in spans.windows(2) {
                    let (from, to) = (w[0].1.clone(), w[1].0.clone());
                    self.take(|m| m.flow(&from, &to));
                }
                (spans[0].0.clone(), spans[spans.len() - 1].1.clone())
            }
            Block::Xor(branches) | Block::And(branches) => {
                let parallel = matches!(block, Block::And(_));
                let (split, join) = (self.fresh("split"), self.fresh("join"));
                self.take(|m| if parallel { m.and(&split).and(&join) } else { m.xor(&split).xor(&join) });
                for b in branches {
                    let (entry, exit) = self.emit(b);
                    self.take(|m| m.flow(&split, &entry).flow(&exit, &join));
                }
                (split, join)
            }
            Block::Loop(body) => {
                let (merge, test) = (self.fresh("merge"), self.fresh("test"));
                self.take(|m| m.xor(&merge).xor(&test));
                let (entry, exit) = self.emit(body);
                self.take(|m| m.flow(&merge, &entry).flow(&exit, &test).flow(&test, &merge));
                (merge, test)
            }
        }
    }
}

pub fn random_model(rng: &mut ChaCha8Rng, params: SynthParams) -> ChoreographyModel {
    let roles = rng.random_range(2..=params.max_roles.max(2));
    let mut budget = params.max_tasks.max(1);
    let block = gen_block(rng, &mut budget, params.max_depth);
    let mut builder = ModelBuilder::new("random");
    for r in 0..roles {
        builder = builder.role(&format!("R{r}"));
    }
    builder = builder.start("start").end("end");
    let mut em = Emitter { builder, rng, roles, next: 0 };
    let (entry, exit) = em.emit(&block);
    em.take(|m| m.flow("start", &entry).flow(&exit, "end"));
    em.builder.build()
}

pub fn random_model_seeded(seed: u64, params: SynthParams) -> ChoreographyModel {
    random_model(&mut ChaCha8Rng::seed_from_u64(seed), params)
}
