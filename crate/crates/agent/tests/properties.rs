use std::cell::Cell as StdCell;
use std::collections::BTreeSet;
use std::sync::Arc;

use discom_agent::{Agent, ApiResult, LocalApi, PlatformApi};
use discom_core::composition::{
    flows, BindingId, ExportDescriptor, ExportId, ImportBinding, Visibility, WorkbookRole,
};
use discom_core::engine::evaluate_all;
use discom_core::model::{CellAddress, CellValue, RangeImage, RangeRef};
use discom_core::testutil::random_acyclic_workbook;
use discom_server::api::{NewExport, NewImport, NewUser};
use discom_server::{Platform, PlatformOptions, UpdateDelta, Updates};
use proptest::prelude::*;

/// Accepts everything; only registration and pushes are meaningful.
#[derive(Default)]
struct Stub {
    next: StdCell<u64>,
}

impl Stub {
    fn id(&self, prefix: &str) -> String {
        self.next.set(self.next.get() + 1);
        format!("{prefix}-{}", self.next.get())
    }
}

impl PlatformApi for Stub {
    fn poll(&self, _: &[(BindingId, u64)]) -> ApiResult<Updates> {
        Ok(Updates::default())
    }
    fn push(&self, _: &str, _: &RangeImage, base: u64) -> ApiResult<u64> {
        Ok(base + 1)
    }
    fn latest(&self, _: &str) -> ApiResult<Option<RangeImage>> {
        Ok(None)
    }
    fn upload(&self, _: &str, _: &str, _: &[ExportId], _: &[BindingId]) -> ApiResult<WorkbookRole> {
        Ok(WorkbookRole::Intermediate)
    }
    fn register_export(&self, n: &NewExport) -> ApiResult<ExportDescriptor> {
        Ok(ExportDescriptor {
            id: self.id("ex"),
            owner: "me".into(),
            space: n.space.clone(),
            name: n.name.clone(),
            description: String::new(),
            range: n.range.clone(),
            visibility: n.visibility.clone(),
            latest_version: 0,
            revoked: false,
        })
    }
    fn register_import(&self, n: &NewImport) -> ApiResult<ImportBinding> {
        Ok(ImportBinding {
            id: self.id("im"),
            importer: "me".into(),
            export_id: n.export_id.clone(),
            target: n.target.clone(),
            applied_version: 0,
        })
    }
    fn catalog(&self) -> ApiResult<Vec<ExportDescriptor>> {
        Ok(Vec::new())
    }
}

fn range(s: &str) -> RangeRef {
    RangeRef::parse(s).unwrap()
}

fn values() -> impl Strategy<Value = CellValue> {
    prop_oneof![
        (-5i32..5).prop_map(|n| CellValue::Number(n as f64)),
        Just(CellValue::Blank),
        "[a-c]{1,2}".prop_map(CellValue::Text),
        any::<bool>().prop_map(CellValue::Boolean),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    /// After an import lands, an export is re-detected exactly when its
    /// image changed, and only if it is reachable from the import.
    #[test]
    fn import_triggers_reexport_exactly_when_upstream_and_changed(
        seed in any::<u64>(),
        image in proptest::collection::vec(values(), 2),
        top in 3u32..8,
        height in 0u32..3,
    ) {
        let wb = random_acyclic_workbook(seed, 48);
        let target = range("S!A1:B1");
        let export = RangeRef::parse(&format!("S!A{top}:F{}", top + height)).unwrap();
        let mut agent = Agent::new(Stub::default(), wb).unwrap();
        let binding = agent.bind_import("up", target.clone()).unwrap();
        agent.register_export("sp", "e", "", export.clone(), Visibility::SpaceWide).unwrap();
        agent.tick().unwrap();
        prop_assert!(agent.detect_modified_exports().is_empty());
        let before = agent.workbook().range_values(&export).unwrap();

        let delta = UpdateDelta {
            binding_id: binding.id,
            image: RangeImage::new("up", 1, 1, 2, image.clone()).unwrap(),
            from_version: 0,
            to_version: 1,
        };
        agent.apply_import(&delta).unwrap();

        // oracle: write the literals into a copy and evaluate from scratch
        let mut oracle = agent.workbook().clone();
        for (a, v) in target.cells().iter().zip(&image) {
            oracle.set_literal(a, v.clone()).unwrap();
        }
        evaluate_all(&mut oracle);
        let after = oracle.range_values(&export).unwrap();
        let changed = before != after;
        let detected = !agent.detect_modified_exports().is_empty();
        prop_assert_eq!(detected, changed);
        if detected {
            let linked = flows(agent.workbook(), &[export], &[target]).unwrap();
            prop_assert!(!linked.is_empty());
        }
    }
}

#[derive(Debug, Clone)]
enum Step {
    Edit(u32, i32),
    Tick,
    Offline,
    Online,
}

fn steps() -> impl Strategy<Value = Vec<Step>> {
    proptest::collection::vec(
        prop_oneof![
            4 => (0u32..6, -20i32..20).prop_map(|(c, v)| Step::Edit(c, v)),
            3 => Just(Step::Tick),
            1 => Just(Step::Offline),
            1 => Just(Step::Online),
        ],
        1..40,
    )
}

/// Runs the trace against a fresh platform and returns, per export, the
/// final image and the committed version numbers.
fn run(trace: &[Step], honour_offline: bool) -> Vec<(Vec<CellValue>, Vec<u64>)> {
    let p = Arc::new(Platform::in_memory(PlatformOptions {
        seed: Some(1),
        ..Default::default()
    }));
    p.add_user(NewUser {
        id: "john".into(),
        name: String::new(),
        secret: "pw".into(),
    })
    .unwrap();
    let space = p.create_space("john", "s").unwrap().id;
    let api = LocalApi::new(p.clone(), p.login("john", "pw").unwrap());
    let switch = api.clone();
    let mut wb = discom_core::model::Workbook::new("john");
    for c in 0..6u32 {
        wb.set_input(&CellAddress::new("S", c + 1, 1).unwrap(), "0").unwrap();
    }
    wb.set_input(&CellAddress::parse("S!A2").unwrap(), "=SUM(A1:C1)").unwrap();
    wb.set_input(&CellAddress::parse("S!B2").unwrap(), "=D1*E1-F1").unwrap();
    let mut agent = Agent::new(api, wb).unwrap();
    let ids: Vec<String> = ["S!A1:C2", "S!D1:F2", "S!A2:B2"]
        .iter()
        .map(|r| {
            agent
                .register_export(&space, r, "", range(r), Visibility::SpaceWide)
                .unwrap()
                .id
        })
        .collect();
    for step in trace {
        match step {
            Step::Edit(c, v) => {
                agent
                    .set_cell(&CellAddress::new("S", c + 1, 1).unwrap(), &v.to_string())
                    .unwrap();
            }
            Step::Tick => {
                agent.tick().unwrap();
            }
            Step::Offline if honour_offline => switch.set_online(false),
            Step::Online | Step::Offline => switch.set_online(true),
        }
    }
    switch.set_online(true);
    agent.tick().unwrap();
    assert!(agent.meta().pending.is_empty());
    let state = p.snapshot();
    ids.iter()
        .map(|id| {
            let rec = state.export(id).unwrap();
            let image = rec.latest_image().unwrap();
            let versions = rec.versions.iter().map(|v| v.version).collect();
            (image.cells().to_vec(), versions)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn offline_windows_do_not_change_final_images(trace in steps()) {
        let online = run(&trace, false);
        let mixed = run(&trace, true);
        for ((a, va), (b, vb)) in online.iter().zip(&mixed) {
            prop_assert_eq!(a, b);
            // gapless, and coalescing can only drop versions
            prop_assert_eq!(va, &(1..=va.len() as u64).collect::<Vec<_>>());
            prop_assert_eq!(vb, &(1..=vb.len() as u64).collect::<Vec<_>>());
            prop_assert!(vb.len() <= va.len());
        }
        let distinct: BTreeSet<usize> = mixed.iter().map(|(_, v)| v.len()).collect();
        prop_assert!(!distinct.contains(&0));
    }
}
