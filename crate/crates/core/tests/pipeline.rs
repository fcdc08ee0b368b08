//! Dataset generation and training are reproducible from their seeds,
//! whatever the size of the worker pool.

use operon_core::data::{generate, Dataset, ProblemSetup};
use operon_core::forward::Problem;
use operon_core::operators::{ArchConfig, FnoConfig, OperatorModel, PcaNetConfig, Split, TrainConfig, TrainState};

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

fn dataset(problem: Problem, threads: usize) -> Dataset {
    let setup = ProblemSetup::reference(problem, 8, 6);
    let model = setup.build().unwrap();
    pool(threads).install(|| {
        let mut ds = generate(model.as_ref(), setup, 24, 77).unwrap();
        ds.split(16, 8, 78).unwrap();
        ds
    })
}

#[test]
fn generation_ignores_the_thread_count() {
    for problem in [Problem::Poisson, Problem::LinearElasticity] {
        let a = dataset(problem, 1);
        let b = dataset(problem, 3);
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        assert_eq!(a.meta, b.meta);
    }
}

#[test]
fn dataset_round_trips_through_disk() {
    let ds = dataset(Problem::LinearElasticity, 2);
    let dir = tempfile::tempdir().unwrap();
    ds.write(dir.path()).unwrap();
    let mut back = Dataset::read(dir.path()).unwrap();
    assert_eq!(back.x, ds.x);
    assert_eq!(back.y, ds.y);
    let shapes: Vec<_> = back.meta.arrays.drain(..).map(|a| (a.name, a.shape)).collect();
    assert_eq!(shapes, [("X".to_string(), vec![24, 63]), ("Y".to_string(), vec![24, 126])]);
    assert_eq!(back.meta, ds.meta);
}

fn train(ds: &Dataset, arch: &ArchConfig, epochs: usize, threads: usize, resume: Option<(OperatorModel, TrainState)>) -> (OperatorModel, TrainState) {
    let (tx, ty) = ds.train_rows();
    let train = Split::new(&tx, &ty).unwrap();
    let cfg = TrainConfig { epochs, lr: 1e-3, batch: 4, weight_decay: 1e-4, seed: 5 };
    pool(threads).install(|| {
        let (mut model, state) = match resume {
            Some((m, s)) => (m, Some(s)),
            None => (OperatorModel::build(ds.mesh().unwrap(), ds.meta.components, arch, train, 6).unwrap(), None),
        };
        let state = model.train(train, None, &cfg, state, |_, _| Ok(())).unwrap();
        (model, state)
    })
}

fn archs() -> [ArchConfig; 2] {
    [
        ArchConfig::PcaNet(PcaNetConfig { depth: 2, width: 16, r_m: 6, r_u: 6 }),
        ArchConfig::DeepOnet(Default::default()),
    ]
}

#[test]
fn training_is_bitwise_reproducible() {
    let ds = dataset(Problem::Poisson, 1);
    for arch in archs() {
        let (a, sa) = train(&ds, &arch, 3, 1, None);
        let (b, sb) = train(&ds, &arch, 3, 3, None);
        assert_eq!(a.params(), b.params());
        assert_eq!(sa.log, sb.log);
    }
}

#[test]
fn resumed_training_matches_uninterrupted_training() {
    let ds = dataset(Problem::Poisson, 1);
    for arch in archs() {
        let (full, full_state) = train(&ds, &arch, 4, 1, None);
        let half = train(&ds, &arch, 2, 1, None);
        let (resumed, resumed_state) = train(&ds, &arch, 4, 1, Some(half));
        assert_eq!(full.params(), resumed.params());
        assert_eq!(full_state.log, resumed_state.log);
    }
}

#[test]
fn fno_training_is_reproducible_on_the_grid() {
    let setup = ProblemSetup::reference(Problem::Poisson, 8, 8);
    let model = setup.build().unwrap();
    let mut ds = generate(model.as_ref(), setup, 12, 1).unwrap();
    ds.split(8, 4, 2).unwrap();
    let arch = ArchConfig::Fno(FnoConfig { n1: 9, n2: 9, d_h: 4, layers: 2, k_max: 3 });
    let (a, _) = train(&ds, &arch, 2, 1, None);
    let (b, _) = train(&ds, &arch, 2, 2, None);
    assert_eq!(a.params(), b.params());
}
