use std::path::PathBuf;

use struchis::graph::fixtures::{tiny, two_task};
use struchis::graph::{load_graph, write_graph, HeteroGraph};

fn fixture_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn canonical(mut g: HeteroGraph) -> HeteroGraph {
    g.canonicalize();
    g
}

#[test]
fn tiny_on_disk_matches_builder() {
    let g = load_graph(fixture_dir("tiny")).unwrap();
    assert_eq!(g.node_types.iter().map(|t| t.count).collect::<Vec<_>>(), vec![2, 3]);
    assert_eq!(g.edge_count(), 3);
    assert_eq!(g, canonical(tiny()));
}

#[test]
fn two_task_on_disk_matches_builder() {
    let g = load_graph(fixture_dir("two_task")).unwrap();
    assert_eq!(g, canonical(two_task()));
}

#[test]
fn written_graph_loads_back_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    for g in [tiny(), two_task()] {
        write_graph(&g, dir.path()).unwrap();
        assert_eq!(load_graph(dir.path()).unwrap(), canonical(g));
    }
}
