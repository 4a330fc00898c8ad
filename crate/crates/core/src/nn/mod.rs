//! Small reverse-mode autodiff engine: dense `f64` tensors, a tape graph,
//! parameter store, Adam, and the layers the extraction heads are built from.

mod gradcheck;
mod graph;
mod layers;
mod params;
mod tensor;

pub use gradcheck::{gradient_check, GradCheckOptions, GradCheckReport};
pub use graph::{bce_with_logits, sigmoid, softplus, Graph, Var};
pub use layers::{BiLstm, Ffn, Linear, Lstm};
pub use params::{
    orthogonal, uniform, xavier_uniform, Adam, AdamConfig, Gradients, Param, ParamGroup, ParamId, ParamStore,
};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn check(store: &ParamStore, build: impl Fn(&mut Graph) -> Var) -> f64 {
        let opts = GradCheckOptions {
            coords_per_param: 64,
            ..Default::default()
        };
        gradient_check(store, build, opts).unwrap().max_rel_error
    }

    #[test]
    fn quadratic_gradient_exact() {
        let mut store = ParamStore::new();
        let t = store.add("theta", Tensor::full(1, 1, 3.0), ParamGroup::Default);
        let build = |g: &mut Graph| {
            let p = g.param(t);
            let sq = g.mul(p, p);
            g.sum(sq)
        };
        let mut g = Graph::eval(&store);
        let l = build(&mut g);
        assert_eq!(g.backward(l).get(t).unwrap().data, vec![6.0]);
        assert!(check(&store, build) < 1e-9);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut store = ParamStore::new();
        store.add("theta", Tensor::full(1, 2, 1.5), ParamGroup::Default);
        let build = |g: &mut Graph| g.input(Tensor::full(1, 1, 4.0));
        assert_eq!(check(&store, build), 0.0);
    }

    #[test]
    fn non_finite_loss_is_error() {
        let mut store = ParamStore::new();
        store.add("theta", Tensor::full(1, 1, 1.0), ParamGroup::Default);
        let build = |g: &mut Graph| g.input(Tensor::full(1, 1, f64::NAN));
        assert!(gradient_check(&store, build, GradCheckOptions::default()).is_err());
    }

    #[test]
    fn elementwise_and_shape_ops_pass_gradcheck() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let a = store.add("a", uniform(3, 4, 1.0, &mut r), ParamGroup::Default);
        let b = store.add("b", uniform(4, 2, 1.0, &mut r), ParamGroup::Default);
        let c = store.add("c", uniform(1, 2, 1.0, &mut r), ParamGroup::Default);
        let emb = store.add("emb", uniform(5, 4, 1.0, &mut r), ParamGroup::Default);
        let err = check(&store, |g| {
            let (pa, pb, pc) = (g.param(a), g.param(b), g.param(c));
            let looked = g.lookup(emb, &[4, 0, 4]);
            let x = g.add(pa, looked);
            let h = g.matmul(x, pb);
            let h = g.add_row(h, pc);
            let t = g.tanh(h);
            let s = g.sigmoid(h);
            let ge = g.gelu(h);
            let m = g.mul(t, s);
            let cat = g.concat_cols(&[m, ge]);
            let rows = g.concat_rows(&[cat, cat]);
            let gathered = g.gather(rows, &[0, 5, 5, 2]);
            let sl = g.slice_cols(gathered, 1, 3);
            let tr = g.transpose(sl);
            let sm = g.softmax(tr);
            let mx = g.max_rows(sm);
            let mean = g.mean_rows(gathered);
            let sc = g.scale(mean, 0.7);
            let s1 = g.sum(mx);
            let s2 = g.sum(sc);
            let both = g.concat_cols(&[s1, s2]);
            g.sum(both)
        });
        assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn lstm_passes_gradcheck() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let x = store.add("x", uniform(5, 3, 1.0, &mut r), ParamGroup::Default);
        let bi = BiLstm::new(&mut store, "bi", 3, 4, &mut r);
        let head = store.add("head", uniform(8, 1, 1.0, &mut r), ParamGroup::Default);
        let err = check(&store, |g| {
            let px = g.param(x);
            let h = bi.forward(g, px);
            let w = g.param(head);
            let y = g.matmul(h, w);
            let y = g.tanh(y);
            g.sum(y)
        });
        assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn lstm_directions_differ_and_match_length() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let l = Lstm::new(&mut store, "l", 2, 3, &mut r);
        let x = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]]);
        let mut g = Graph::eval(&store);
        let xi = g.input(x);
        let f = l.forward(&mut g, xi, false);
        let b = l.forward(&mut g, xi, true);
        assert_eq!(g.shape(f), (3, 3));
        assert_ne!(g.value(f), g.value(b));
    }

    #[test]
    fn bce_with_logits_matches_closed_form() {
        let mut store = ParamStore::new();
        let z = store.add("z", Tensor::from_vec(2, 1, vec![0.3, -1.2]), ParamGroup::Default);
        let build = |g: &mut Graph| {
            let pz = g.param(z);
            bce_with_logits(g, pz, &[1.0, 0.0])
        };
        let mut g = Graph::eval(&store);
        let l = build(&mut g);
        let want = -(sigmoid(0.3)).ln() - (1.0 - sigmoid(-1.2)).ln();
        assert!((g.scalar(l) - want).abs() < 1e-12);
        assert!(check(&store, build) < 1e-7);
    }

    #[test]
    fn ffn_dropout_only_in_training() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let ffn = Ffn::new(&mut store, "f", 4, &[8, 8], Some(1), 0.5, &mut r);
        let x = uniform(3, 4, 1.0, &mut r);
        let run = |training: bool, seed: u64| {
            let mut g = Graph::new(&store, training, seed);
            let xi = g.input(x.clone());
            let y = ffn.forward(&mut g, xi);
            g.value(y).clone()
        };
        assert_eq!(run(false, 1), run(false, 2));
        assert_ne!(run(true, 1), run(true, 2));
        assert_eq!(run(true, 3), run(true, 3));
    }
}
