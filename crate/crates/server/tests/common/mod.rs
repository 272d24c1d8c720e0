#![allow(dead_code)]

use discom_core::composition::{ExportDescriptor, ImportBinding, MemberRole, Visibility};
use discom_core::engine::evaluate_all;
use discom_core::model::{CellAddress, CellValue, RangeImage, RangeRef, Workbook};
use discom_server::api::{NewExport, NewImport, NewUser};
use discom_server::Platform;

pub fn range(s: &str) -> RangeRef {
    RangeRef::parse(s).unwrap()
}

pub fn numbers(export: &str, rows: u32, cols: u32, values: &[f64]) -> RangeImage {
    RangeImage::new(export, 0, rows, cols, values.iter().map(|&v| CellValue::Number(v)).collect()).unwrap()
}

pub fn add_users(p: &Platform, ids: &[&str]) {
    for id in ids {
        p.add_user(NewUser {
            id: id.to_string(),
            name: String::new(),
            secret: format!("{id}-secret"),
        })
        .unwrap();
    }
}

/// carl creates a space with three dealers.
pub fn dealer_space(p: &Platform) -> String {
    add_users(p, &["carl", "john", "mary", "paul"]);
    let space = p.create_space("carl", "Area North 2010").unwrap();
    for cd in ["john", "mary", "paul"] {
        p.add_member("carl", &space.id, cd, MemberRole::Both).unwrap();
    }
    space.id
}

pub fn export(p: &Platform, owner: &str, space: &str, r: &str, visibility: Visibility) -> ExportDescriptor {
    p.register_export(
        owner,
        NewExport {
            space: space.to_string(),
            name: format!("{owner} {r}"),
            description: String::new(),
            range: range(r),
            visibility,
        },
    )
    .unwrap()
}

pub fn restricted(users: &[&str]) -> Visibility {
    Visibility::Restricted(users.iter().map(|u| u.to_string()).collect())
}

pub fn bind(p: &Platform, importer: &str, export_id: &str, target: &str) -> ImportBinding {
    p.register_import(
        importer,
        NewImport {
            export_id: export_id.to_string(),
            target: range(target),
        },
    )
    .unwrap()
}

pub fn workbook(id: &str, cells: &[(&str, &str)]) -> Workbook {
    let mut wb = Workbook::new(id);
    for (addr, input) in cells {
        wb.set_input(&CellAddress::parse(addr).unwrap(), input).unwrap();
    }
    evaluate_all(&mut wb);
    wb
}
