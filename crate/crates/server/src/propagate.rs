//! The data propagation function and the cross-workbook ordering it runs in.

use std::collections::{BTreeMap, BTreeSet};

use discom_core::composition::{authorize, flows, ExportId};
use discom_core::engine::{evaluate_all, recalculate};
use discom_core::model::{decode_workbook, encode_range_image, encode_workbook, RangeRef};
use petgraph::algo::{tarjan_scc, toposort};
use petgraph::graphmap::DiGraphMap;

use crate::error::{PlatformError, Result};
use crate::state::{Author, PlatformState, StoredVersion};

/// Runs the four propagation steps for one hosted workbook: load it, write
/// the latest image of every import into its target, recalculate, and
/// commit a new version of each export whose image changed. Returns the
/// committed `(export, version)` pairs.
pub(crate) fn propagate_in(state: &mut PlatformState, wb_id: &str) -> Result<Vec<(ExportId, u64)>> {
    let hosted = state
        .workbooks
        .get(wb_id)
        .ok_or_else(|| PlatformError::NotFound(format!("workbook {wb_id}")))?;
    let mut wb = decode_workbook(&hosted.document)
        .map_err(|e| PlatformError::Integrity(format!("workbook {wb_id}: {e}")))?;
    evaluate_all(&mut wb);

    let mut dirty = Vec::new();
    let mut applied = BTreeMap::new();
    for bid in &hosted.imports {
        let Some(binding) = state.imports.get(bid) else { continue };
        let Some(rec) = state.exports.get(&binding.export_id) else { continue };
        let readable = !rec.descriptor.revoked
            && state
                .spaces
                .get(&rec.descriptor.space)
                .is_some_and(|s| authorize(&hosted.owner, &rec.descriptor, s).is_permit());
        let Some(image) = rec.latest_image().filter(|_| readable) else { continue };
        let written = wb
            .write_image(&binding.target, image.cells())
            .map_err(|e| PlatformError::Integrity(format!("workbook {wb_id}: {e}")))?;
        dirty.extend(written);
        applied.insert(binding.export_id.clone(), image.version());
    }
    recalculate(&mut wb, dirty.iter());

    let mut committed = Vec::new();
    for eid in &hosted.exports {
        let Some(rec) = state.exports.get_mut(eid) else { continue };
        if rec.descriptor.revoked {
            continue;
        }
        let image = wb
            .range_image(&rec.descriptor.range, eid, 0)
            .map_err(|e| PlatformError::Integrity(format!("workbook {wb_id}: {e}")))?;
        if rec.latest_image().is_some_and(|latest| latest.same_content(&image)) {
            continue;
        }
        let version = discom_core::composition::next_version(&rec.descriptor);
        rec.versions.push(StoredVersion {
            version,
            authored_by: Author::Platform,
            image: encode_range_image(&image.with_identity(eid.clone(), version)),
        });
        rec.descriptor.latest_version = version;
        committed.push((eid.clone(), version));
    }

    let hosted = state.workbooks.get_mut(wb_id).expect("checked above");
    hosted.document = encode_workbook(&wb);
    hosted.last_propagated_versions.extend(applied);
    Ok(committed)
}

/// Ordering information over all hosted workbooks.
#[derive(Debug, Default)]
pub(crate) struct Topology {
    /// Depth of a workbook's deepest imported export in the export graph.
    pub rank: BTreeMap<String, usize>,
    /// Workbooks that take part in a cross-workbook cycle, with the export
    /// ids on that cycle.
    pub cycles: BTreeMap<String, Vec<ExportId>>,
}

/// Builds the export-level flow graph: an edge `x -> y` means some hosted
/// workbook imports `x` and its export `y` depends on that import.
pub(crate) fn topology(state: &PlatformState) -> Topology {
    let ids: Vec<&ExportId> = state.exports.keys().collect();
    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut graph: DiGraphMap<usize, ()> = DiGraphMap::new();
    let mut wb_edges: BTreeMap<&str, Vec<(usize, usize)>> = BTreeMap::new();
    let mut wb_inputs: BTreeMap<&str, Vec<usize>> = BTreeMap::new();

    for (wid, hosted) in &state.workbooks {
        let Ok(wb) = decode_workbook(&hosted.document) else { continue };
        let exports: Vec<(usize, RangeRef)> = hosted
            .exports
            .iter()
            .filter_map(|e| Some((index[e.as_str()], state.exports.get(e)?.descriptor.range.clone())))
            .collect();
        let imports: Vec<(usize, RangeRef)> = hosted
            .imports
            .iter()
            .filter_map(|b| {
                let b = state.imports.get(b)?;
                Some((*index.get(b.export_id.as_str())?, b.target.clone()))
            })
            .collect();
        let export_ranges: Vec<RangeRef> = exports.iter().map(|(_, r)| r.clone()).collect();
        let import_ranges: Vec<RangeRef> = imports.iter().map(|(_, r)| r.clone()).collect();
        let pairs = flows(&wb, &export_ranges, &import_ranges).unwrap_or_default();
        for n in exports.iter().chain(&imports).map(|(n, _)| *n) {
            graph.add_node(n);
        }
        let edges: Vec<(usize, usize)> = pairs.into_iter().map(|(i, e)| (imports[i].0, exports[e].0)).collect();
        for &(from, to) in &edges {
            graph.add_edge(from, to, ());
        }
        wb_edges.insert(wid, edges);
        wb_inputs.insert(wid, imports.iter().map(|(n, _)| *n).collect());
    }

    let mut component = BTreeMap::new();
    for scc in tarjan_scc(&graph) {
        let cyclic = scc.len() > 1 || scc.iter().any(|&n| graph.contains_edge(n, n));
        if cyclic {
            let members: BTreeSet<usize> = scc.iter().copied().collect();
            for &n in &scc {
                component.insert(n, members.clone());
            }
        }
    }

    let mut topo = Topology::default();
    for (wid, edges) in &wb_edges {
        let mut on_cycle = BTreeSet::new();
        for (from, to) in edges {
            if let Some(members) = component.get(from).filter(|m| m.contains(to)) {
                on_cycle.extend(members.iter().copied());
            }
        }
        if !on_cycle.is_empty() {
            topo.cycles
                .insert(wid.to_string(), on_cycle.iter().map(|&n| ids[n].clone()).collect());
        }
    }

    let mut acyclic = graph.clone();
    for n in component.keys() {
        acyclic.remove_node(*n);
    }
    let mut depth: BTreeMap<usize, usize> = BTreeMap::new();
    for n in toposort(&acyclic, None).expect("cycles removed") {
        let d = acyclic
            .neighbors_directed(n, petgraph::Direction::Incoming)
            .map(|p| depth[&p] + 1)
            .max()
            .unwrap_or(0);
        depth.insert(n, d);
    }
    for (wid, inputs) in wb_inputs {
        let rank = inputs.iter().filter_map(|n| depth.get(n)).max().copied().unwrap_or(0);
        topo.rank.insert(wid.to_string(), rank);
    }
    topo
}
