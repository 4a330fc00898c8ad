use rand::Rng;

use super::{Tag, TagSet, NUM_TAGS};
use crate::error::{Error, Result};
use crate::nn::{uniform, Graph, Linear, ParamGroup, ParamId, ParamStore, Tensor, Var};

/// CRF parameters: emission projection, transition matrix (`from x to`),
/// start and end scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Crf {
    pub emission: Linear,
    pub transitions: ParamId,
    pub start: ParamId,
    pub end: ParamId,
}

/// Borrowed structural scores; masked entries are ignored wherever they
/// appear, which is the same as treating them as `-inf`.
#[derive(Debug, Clone, Copy)]
pub struct CrfScores<'a> {
    pub transitions: &'a Tensor,
    pub start: &'a Tensor,
    pub end: &'a Tensor,
}

impl Crf {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, rng: &mut impl Rng) -> Self {
        Crf {
            emission: Linear::new(store, &format!("{name}.emission"), input, NUM_TAGS, rng),
            transitions: store.add(
                format!("{name}.transitions"),
                uniform(NUM_TAGS, NUM_TAGS, 0.1, rng),
                ParamGroup::Default,
            ),
            start: store.add(format!("{name}.start"), Tensor::zeros(1, NUM_TAGS), ParamGroup::Default),
            end: store.add(format!("{name}.end"), Tensor::zeros(1, NUM_TAGS), ParamGroup::Default),
        }
    }

    pub fn scores<'a>(&self, store: &'a ParamStore) -> CrfScores<'a> {
        CrfScores {
            transitions: store.get(self.transitions),
            start: store.get(self.start),
            end: store.get(self.end),
        }
    }

    /// Emission scores `L x 17`.
    pub fn emissions(&self, g: &mut Graph, embeddings: Var) -> Var {
        self.emission.forward(g, embeddings)
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

const NEG: f64 = f64::NEG_INFINITY;

fn masked(ok: bool, v: f64) -> f64 {
    if ok {
        v
    } else {
        NEG
    }
}

/// Forward log-scores `alpha[t][j]`.
fn forward(emissions: &Tensor, s: CrfScores, mask: &TagSet) -> Vec<[f64; NUM_TAGS]> {
    let steps = emissions.rows;
    let mut alpha = vec![[NEG; NUM_TAGS]; steps];
    for j in 0..NUM_TAGS {
        alpha[0][j] = masked(mask.start[j], s.start.data[j] + emissions.get(0, j));
    }
    for t in 1..steps {
        for j in 0..NUM_TAGS {
            let prev = &alpha[t - 1];
            let lse = log_sum_exp(
                (0..NUM_TAGS)
                    .filter(|&i| mask.allowed[i][j])
                    .map(|i| prev[i] + s.transitions.get(i, j)),
            );
            alpha[t][j] = lse + emissions.get(t, j);
        }
    }
    alpha
}

/// Backward log-scores `beta[t][i]`, excluding the emission at `t`.
fn backward(emissions: &Tensor, s: CrfScores, mask: &TagSet) -> Vec<[f64; NUM_TAGS]> {
    let steps = emissions.rows;
    let mut beta = vec![[NEG; NUM_TAGS]; steps];
    for i in 0..NUM_TAGS {
        beta[steps - 1][i] = masked(mask.end[i], s.end.data[i]);
    }
    for t in (0..steps - 1).rev() {
        for i in 0..NUM_TAGS {
            let next = &beta[t + 1];
            beta[t][i] = log_sum_exp(
                (0..NUM_TAGS)
                    .filter(|&j| mask.allowed[i][j])
                    .map(|j| s.transitions.get(i, j) + emissions.get(t + 1, j) + next[j]),
            );
        }
    }
    beta
}

fn check_emissions(emissions: &Tensor) -> Result<()> {
    if emissions.cols != NUM_TAGS {
        return Err(Error::Shape(format!("emissions have {} columns, expected {NUM_TAGS}", emissions.cols)));
    }
    if emissions.rows == 0 {
        return Err(Error::Empty("CRF over an empty sequence".into()));
    }
    Ok(())
}

/// `log Z` over all mask-valid sequences.
pub fn log_partition(emissions: &Tensor, s: CrfScores) -> Result<f64> {
    check_emissions(emissions)?;
    let mask = TagSet::bioul();
    let alpha = forward(emissions, s, &mask);
    let last = alpha.last().unwrap();
    Ok(log_sum_exp((0..NUM_TAGS).filter(|&j| mask.end[j]).map(|j| last[j] + s.end.data[j])))
}

/// Unnormalized score of one tag sequence (`-inf` if it breaks the mask).
pub fn sequence_score(emissions: &Tensor, s: CrfScores, tags: &[Tag]) -> f64 {
    if !TagSet::bioul().is_valid(tags) || tags.len() != emissions.rows || tags.is_empty() {
        return NEG;
    }
    let mut score = s.start.data[tags[0].index()] + s.end.data[tags[tags.len() - 1].index()];
    for (t, tag) in tags.iter().enumerate() {
        score += emissions.get(t, tag.index());
    }
    for w in tags.windows(2) {
        score += s.transitions.get(w[0].index(), w[1].index());
    }
    score
}

/// NLL and its gradients with respect to emissions and structural scores.
#[derive(Debug, Clone, PartialEq)]
pub struct NllGrads {
    pub nll: f64,
    pub log_z: f64,
    pub emissions: Tensor,
    pub transitions: Tensor,
    pub start: Tensor,
    pub end: Tensor,
}

/// `log Z - score(tags)` via forward-backward, with exact gradients
/// (expected minus observed feature counts).
pub fn nll_with_grads(emissions: &Tensor, s: CrfScores, tags: &[Tag]) -> Result<NllGrads> {
    check_emissions(emissions)?;
    if tags.len() != emissions.rows {
        return Err(Error::LengthMismatch {
            left: tags.len(),
            right: emissions.rows,
        });
    }
    let mask = TagSet::bioul();
    mask.validate(tags)?;
    let steps = emissions.rows;
    let alpha = forward(emissions, s, &mask);
    let beta = backward(emissions, s, &mask);
    let log_z = log_sum_exp((0..NUM_TAGS).map(|j| alpha[0][j] + beta[0][j]));
    let gold = sequence_score(emissions, s, tags);

    let mut de = Tensor::zeros(steps, NUM_TAGS);
    let mut dt = Tensor::zeros(NUM_TAGS, NUM_TAGS);
    let mut ds = Tensor::zeros(1, NUM_TAGS);
    let mut dend = Tensor::zeros(1, NUM_TAGS);
    for t in 0..steps {
        for j in 0..NUM_TAGS {
            let p = (alpha[t][j] + beta[t][j] - log_z).exp();
            de.data[t * NUM_TAGS + j] = p;
            if t == 0 {
                ds.data[j] = p;
            }
            if t == steps - 1 {
                dend.data[j] = p;
            }
        }
    }
    for t in 0..steps - 1 {
        for i in 0..NUM_TAGS {
            if alpha[t][i] == NEG {
                continue;
            }
            for j in 0..NUM_TAGS {
                if !mask.allowed[i][j] {
                    continue;
                }
                let lp = alpha[t][i] + s.transitions.get(i, j) + emissions.get(t + 1, j) + beta[t + 1][j] - log_z;
                dt.data[i * NUM_TAGS + j] += lp.exp();
            }
        }
    }
    for (t, tag) in tags.iter().enumerate() {
        de.data[t * NUM_TAGS + tag.index()] -= 1.0;
    }
    for w in tags.windows(2) {
        dt.data[w[0].index() * NUM_TAGS + w[1].index()] -= 1.0;
    }
    ds.data[tags[0].index()] -= 1.0;
    dend.data[tags[steps - 1].index()] -= 1.0;
    Ok(NllGrads {
        nll: log_z - gold,
        log_z,
        emissions: de,
        transitions: dt,
        start: ds,
        end: dend,
    })
}

/// CRF negative log-likelihood of `tags` given token embeddings, as a graph
/// node differentiable in the embeddings and every CRF parameter.
pub fn crf_nll(g: &mut Graph, embeddings: Var, tags: &[Tag], crf: &Crf) -> Result<Var> {
    let em = crf.emissions(g, embeddings);
    let grads = nll_with_grads(g.value(em), crf.scores(g.store()), tags)?;
    let (tv, sv, ev) = (g.param(crf.transitions), g.param(crf.start), g.param(crf.end));
    Ok(g.custom_scalar(
        grads.nll,
        vec![
            (em, grads.emissions),
            (tv, grads.transitions),
            (sv, grads.start),
            (ev, grads.end),
        ],
    ))
}

/// Highest-scoring mask-valid sequence. Ties go to the lowest tag index,
/// both at every backpointer and at the final step.
pub fn viterbi(emissions: &Tensor, s: CrfScores) -> Vec<Tag> {
    let steps = emissions.rows;
    if steps == 0 {
        return Vec::new();
    }
    let mask = TagSet::bioul();
    let mut score = [NEG; NUM_TAGS];
    for j in 0..NUM_TAGS {
        score[j] = masked(mask.start[j], s.start.data[j] + emissions.get(0, j));
    }
    let mut back = vec![[0u8; NUM_TAGS]; steps];
    for t in 1..steps {
        let mut next = [NEG; NUM_TAGS];
        for j in 0..NUM_TAGS {
            let mut best = NEG;
            let mut arg = 0;
            for i in 0..NUM_TAGS {
                if !mask.allowed[i][j] || score[i] == NEG {
                    continue;
                }
                let v = score[i] + s.transitions.get(i, j);
                if v > best {
                    best = v;
                    arg = i;
                }
            }
            next[j] = best + emissions.get(t, j);
            back[t][j] = arg as u8;
        }
        score = next;
    }
    let mut best = NEG;
    let mut last = 0;
    for j in 0..NUM_TAGS {
        if !mask.end[j] {
            continue;
        }
        let v = score[j] + s.end.data[j];
        if v > best {
            best = v;
            last = j;
        }
    }
    let mut path = vec![Tag::O; steps];
    let mut cur = last;
    for t in (0..steps).rev() {
        path[t] = Tag::from_index(cur).unwrap();
        cur = back[t][cur] as usize;
    }
    path
}

/// Decodes token embeddings `L x d` with stored CRF parameters.
pub fn viterbi_decode(embeddings: &Tensor, store: &ParamStore, crf: &Crf) -> Vec<Tag> {
    if embeddings.rows == 0 {
        return Vec::new();
    }
    let mut g = Graph::eval(store);
    let x = g.input(embeddings.clone());
    let em = crf.emissions(&mut g, x);
    viterbi(g.value(em), crf.scores(store))
}
