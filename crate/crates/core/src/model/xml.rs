//! Canonical XML interchange for range images and whole workbooks.
//!
//! Range image:
//!
//! ```text
//! <range-image export-id="ex-1" version="3" rows="1" cols="2"><c t="n">5</c><c t="blank"/></range-image>
//! ```
//!
//! Workbook:
//!
//! ```text
//! <workbook id="w"><property name="k">v</property><sheet name="S"><cell addr="A1" t="n" v="2"/><cell addr="A2" f="=A1*2"/></sheet></workbook>
//! ```
//!
//! Output is UTF-8 with no whitespace between elements; equal inputs always
//! produce byte-identical documents.

use std::fmt::Write as _;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use thiserror::Error;

use super::address::{AddressError, CellAddress};
use super::image::RangeImage;
use super::value::{parse_number, CellValue, ErrorCode};
use super::workbook::{CellContent, Workbook, WorkbookError, WorkbookId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum XmlError {
    #[error("malformed XML at byte {offset}: {message}")]
    Syntax { offset: u64, message: String },
    #[error("invalid document at byte {offset}: {message}")]
    Schema { offset: u64, message: String },
    #[error("invalid cell `{location}`: {message}")]
    Cell { location: String, message: String },
}

impl XmlError {
    fn schema(offset: u64, message: impl Into<String>) -> Self {
        XmlError::Schema {
            offset,
            message: message.into(),
        }
    }
}

fn escape_into(out: &mut String, text: &str, attr: bool) {
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' if attr => out.push_str("&quot;"),
            '\r' => out.push_str("&#13;"),
            '\n' if attr => out.push_str("&#10;"),
            '\t' if attr => out.push_str("&#9;"),
            c => out.push(c),
        }
    }
}

fn type_tag(value: &CellValue) -> &'static str {
    match value {
        CellValue::Blank => "blank",
        CellValue::Number(_) => "n",
        CellValue::Text(_) => "s",
        CellValue::Boolean(_) => "b",
        CellValue::Error(_) => "e",
    }
}

fn value_text(value: &CellValue) -> String {
    match value {
        CellValue::Blank => String::new(),
        CellValue::Number(n) => format!("{n}"),
        CellValue::Text(s) => s.clone(),
        CellValue::Boolean(b) => b.to_string(),
        CellValue::Error(e) => e.as_str().to_string(),
    }
}

fn parse_value(tag: &str, text: &str) -> Result<CellValue, String> {
    match tag {
        "blank" if text.is_empty() => Ok(CellValue::Blank),
        "blank" => Err("blank cell carries text".into()),
        "n" => parse_number(text)
            .map(CellValue::number)
            .ok_or_else(|| format!("bad number `{text}`")),
        "s" => Ok(CellValue::Text(text.to_string())),
        "b" => match text {
            "true" => Ok(CellValue::Boolean(true)),
            "false" => Ok(CellValue::Boolean(false)),
            _ => Err(format!("bad boolean `{text}`")),
        },
        "e" => text
            .parse::<ErrorCode>()
            .map(CellValue::Error)
            .map_err(|_| format!("unknown error code `{text}`")),
        other => Err(format!("unknown cell type `{other}`")),
    }
}

pub fn encode_range_image(image: &RangeImage) -> String {
    let mut out = String::with_capacity(64 + image.cells().len() * 24);
    out.push_str("<range-image export-id=\"");
    escape_into(&mut out, image.export_id(), true);
    let _ = write!(
        out,
        "\" version=\"{}\" rows=\"{}\" cols=\"{}\">",
        image.version(),
        image.rows(),
        image.cols()
    );
    for value in image.cells() {
        if value.is_blank() {
            out.push_str("<c t=\"blank\"/>");
        } else {
            let _ = write!(out, "<c t=\"{}\">", type_tag(value));
            escape_into(&mut out, &value_text(value), false);
            out.push_str("</c>");
        }
    }
    out.push_str("</range-image>");
    out
}

pub fn decode_range_image(doc: &str) -> Result<RangeImage, XmlError> {
    let root = parse_tree(doc)?;
    if root.name != "range-image" {
        return Err(XmlError::schema(root.offset, format!("expected <range-image>, found <{}>", root.name)));
    }
    let export_id = root.attr("export-id")?.to_string();
    let version = root.attr_num::<u64>("version")?;
    let rows = root.attr_num::<u32>("rows")?;
    let cols = root.attr_num::<u32>("cols")?;
    let mut cells = Vec::with_capacity(root.children.len());
    for child in root.elements() {
        if child.name != "c" {
            return Err(XmlError::schema(child.offset, format!("unexpected <{}>", child.name)));
        }
        let value = parse_value(child.attr("t")?, &child.text())
            .map_err(|m| XmlError::schema(child.offset, m))?;
        cells.push(value);
    }
    RangeImage::new(export_id, version, rows, cols, cells)
        .map_err(|e| XmlError::schema(root.offset, e.to_string()))
}

pub fn encode_workbook(wb: &Workbook) -> String {
    let mut out = String::new();
    out.push_str("<workbook id=\"");
    escape_into(&mut out, &wb.id.0, true);
    out.push_str("\">");
    for (key, value) in &wb.properties {
        out.push_str("<property name=\"");
        escape_into(&mut out, key, true);
        out.push_str("\">");
        escape_into(&mut out, value, false);
        out.push_str("</property>");
    }
    for sheet in wb.sheets() {
        out.push_str("<sheet name=\"");
        escape_into(&mut out, &sheet.name, true);
        out.push_str("\">");
        for (coord, cell) in &sheet.cells {
            let _ = write!(out, "<cell addr=\"{coord}\"");
            match cell.formula_source() {
                Some(source) => {
                    out.push_str(" f=\"");
                    escape_into(&mut out, source, true);
                }
                None => {
                    let value = match &cell.content {
                        CellContent::Literal(v) => v,
                        CellContent::Formula(_) => unreachable!("formula_source returned None"),
                    };
                    let _ = write!(out, " t=\"{}\" v=\"", type_tag(value));
                    escape_into(&mut out, &value_text(value), true);
                }
            }
            out.push_str("\"/>");
        }
        out.push_str("</sheet>");
    }
    out.push_str("</workbook>");
    out
}

/// Decodes a workbook document. Computed values of formula cells are left
/// Blank; run the engine to derive them.
pub fn decode_workbook(doc: &str) -> Result<Workbook, XmlError> {
    let root = parse_tree(doc)?;
    if root.name != "workbook" {
        return Err(XmlError::schema(root.offset, format!("expected <workbook>, found <{}>", root.name)));
    }
    let mut wb = Workbook::new(WorkbookId(root.attr("id")?.to_string()));
    for child in root.elements() {
        match child.name.as_str() {
            "property" => {
                wb.properties
                    .insert(child.attr("name")?.to_string(), child.text());
            }
            "sheet" => {
                let name = child.attr("name")?;
                wb.add_sheet(name).map_err(|e| XmlError::schema(child.offset, e.to_string()))?;
                for cell in child.elements() {
                    decode_cell(&mut wb, name, cell)?;
                }
            }
            other => return Err(XmlError::schema(child.offset, format!("unexpected <{other}>"))),
        }
    }
    wb.take_edits();
    Ok(wb)
}

fn decode_cell(wb: &mut Workbook, sheet: &str, el: &Element) -> Result<(), XmlError> {
    if el.name != "cell" {
        return Err(XmlError::schema(el.offset, format!("unexpected <{}> in sheet", el.name)));
    }
    let raw = el.attr("addr")?;
    let addr = CellAddress::parse_in(raw, sheet)
        .ok()
        .filter(|a| a.sheet == sheet)
        .ok_or_else(|| {
            let err: Option<AddressError> = CellAddress::parse_in(raw, sheet).err();
            XmlError::Cell {
                location: format!("{sheet}!{raw}"),
                message: err.map_or_else(|| "address must be sheet-local".to_string(), |e| e.to_string()),
            }
        })?;
    let cell_err = |message: String| XmlError::Cell {
        location: addr.to_string(),
        message,
    };
    match (el.opt_attr("f"), el.opt_attr("t"), el.opt_attr("v")) {
        (Some(f), None, None) => wb.set_formula(&addr, f).map_err(|e| match e {
            WorkbookError::Formula(fe) => cell_err(fe.to_string()),
            other => cell_err(other.to_string()),
        }),
        (None, Some(t), v) => {
            let value = parse_value(t, v.unwrap_or("")).map_err(cell_err)?;
            if value.is_blank() {
                return Err(cell_err("blank cells are not stored".into()));
            }
            wb.set_literal(&addr, value).map_err(|e| cell_err(e.to_string()))
        }
        _ => Err(cell_err("cell needs either `f` or `t`+`v`".into())),
    }
}

#[derive(Debug)]
struct Element {
    name: String,
    offset: u64,
    attrs: Vec<(String, String)>,
    children: Vec<Node>,
}

#[derive(Debug)]
enum Node {
    Element(Element),
    Text(String),
}

impl Element {
    fn opt_attr(&self, key: &str) -> Option<&str> {
        self.attrs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn attr(&self, key: &str) -> Result<&str, XmlError> {
        self.opt_attr(key).ok_or_else(|| {
            XmlError::schema(self.offset, format!("<{}> missing attribute `{key}`", self.name))
        })
    }

    fn attr_num<T: std::str::FromStr>(&self, key: &str) -> Result<T, XmlError> {
        let raw = self.attr(key)?;
        raw.parse()
            .map_err(|_| XmlError::schema(self.offset, format!("attribute `{key}`: bad number `{raw}`")))
    }

    fn elements(&self) -> impl Iterator<Item = &Element> {
        self.children.iter().filter_map(|n| match n {
            Node::Element(e) => Some(e),
            Node::Text(_) => None,
        })
    }

    fn text(&self) -> String {
        self.children
            .iter()
            .filter_map(|n| match n {
                Node::Text(t) => Some(t.as_str()),
                Node::Element(_) => None,
            })
            .collect()
    }
}

fn start_element(reader: &Reader<&[u8]>, e: &BytesStart<'_>, offset: u64) -> Result<Element, XmlError> {
    let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
    let mut attrs = Vec::new();
    for attr in e.attributes() {
        let attr = attr.map_err(|err| XmlError::Syntax {
            offset,
            message: err.to_string(),
        })?;
        let key = String::from_utf8_lossy(attr.key.as_ref()).into_owned();
        let value = attr
            .decode_and_unescape_value(reader.decoder())
            .map_err(|err| XmlError::Syntax {
                offset,
                message: err.to_string(),
            })?
            .into_owned();
        attrs.push((key, value));
    }
    Ok(Element {
        name,
        offset,
        attrs,
        children: Vec::new(),
    })
}

fn parse_tree(doc: &str) -> Result<Element, XmlError> {
    let mut reader = Reader::from_str(doc);
    reader.config_mut().trim_text(false);
    let mut stack: Vec<Element> = Vec::new();
    let mut root: Option<Element> = None;
    loop {
        let offset = reader.buffer_position() as u64;
        let event = reader.read_event().map_err(|err| XmlError::Syntax {
            offset: reader.error_position() as u64,
            message: err.to_string(),
        })?;
        match event {
            Event::Start(e) => {
                if root.is_some() {
                    return Err(XmlError::schema(offset, "content after root element"));
                }
                stack.push(start_element(&reader, &e, offset)?);
            }
            Event::Empty(e) => {
                let el = start_element(&reader, &e, offset)?;
                match stack.last_mut() {
                    Some(parent) => parent.children.push(Node::Element(el)),
                    None if root.is_none() => root = Some(el),
                    None => return Err(XmlError::schema(offset, "content after root element")),
                }
            }
            Event::End(_) => {
                let el = stack.pop().expect("reader checks matching end tags");
                match stack.last_mut() {
                    Some(parent) => parent.children.push(Node::Element(el)),
                    None => root = Some(el),
                }
            }
            Event::Text(t) => {
                let text = t.unescape().map_err(|err| XmlError::Syntax {
                    offset,
                    message: err.to_string(),
                })?;
                match stack.last_mut() {
                    Some(parent) => parent.children.push(Node::Text(text.into_owned())),
                    None if text.trim().is_empty() => {}
                    None => return Err(XmlError::schema(offset, "text outside root element")),
                }
            }
            Event::CData(c) => {
                let text = String::from_utf8_lossy(&c).into_owned();
                match stack.last_mut() {
                    Some(parent) => parent.children.push(Node::Text(text)),
                    None => return Err(XmlError::schema(offset, "CDATA outside root element")),
                }
            }
            Event::Eof => {
                if !stack.is_empty() {
                    return Err(XmlError::Syntax {
                        offset,
                        message: format!("unclosed <{}>", stack.last().map(|e| e.name.as_str()).unwrap_or("")),
                    });
                }
                return root.ok_or_else(|| XmlError::schema(offset, "empty document"));
            }
            Event::Decl(_) | Event::Comment(_) | Event::PI(_) | Event::DocType(_) => {}
        }
    }
}
