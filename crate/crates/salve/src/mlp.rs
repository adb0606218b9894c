//! A fixed subset of the Mobile Location Protocol: a location request
//! (`svc_init`/`slir`) carrying the credential, the SIM ids and the session
//! digest, and an answer (`slia`) carrying the result code and the signed
//! statement as Base64.
//!
//! ```xml
//! <svc_init ver="3.2.0" req_id="7">
//!   <hdr><client><pwd>secret</pwd></client></hdr>
//!   <slir><msids><msid type="IMSI">228011234567890</msid></msids>
//!     <salve_digest>9f86…</salve_digest></slir>
//! </svc_init>
//!
//! <slia ver="3.2.0" req_id="7"><result resid="0">OK</result>
//!   <salve_statement ver="1">AQ…</salve_statement></slia>
//! ```

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use quick_xml::events::{BytesDecl, BytesEnd, BytesStart, BytesText, Event};
use quick_xml::{Reader, Writer};

use salve_core::crypto::Digest;
use salve_core::gmlc::{LocationStatement, MlpRequest, MlpResponse, MlpStatus, STATEMENT_VERSION};

use crate::Error;

pub const MLP_VERSION: &str = "3.2.0";

fn mlp_err(e: impl std::fmt::Display) -> Error {
    Error::Mlp(e.to_string())
}

/// Result codes as in MLP's `resid`.
fn resid(status: MlpStatus) -> u8 {
    match status {
        MlpStatus::Ok => 0,
        MlpStatus::Unauthorized => 4,
        MlpStatus::UnknownSim => 5,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Element {
    name: String,
    attrs: Vec<(String, String)>,
    text: String,
    children: Vec<Element>,
}

impl Element {
    fn attr(&self, key: &str) -> Option<&str> {
        self.attrs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn child(&self, name: &str) -> Result<&Element, Error> {
        self.children
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::Mlp(format!("<{}> lacks <{name}>", self.name)))
    }

    fn path(&self, names: &[&str]) -> Result<&Element, Error> {
        names.iter().try_fold(self, |e, n| e.child(n))
    }

    fn req_id(&self) -> Result<u64, Error> {
        self.attr("req_id")
            .ok_or_else(|| Error::Mlp(format!("<{}> lacks req_id", self.name)))?
            .parse()
            .map_err(mlp_err)
    }
}

fn start(name: &str) -> Element {
    Element { name: name.to_owned(), ..Element::default() }
}

fn parse(xml: &str) -> Result<Element, Error> {
    let mut reader = Reader::from_str(xml);
    reader.config_mut().trim_text(true);
    let mut stack: Vec<Element> = Vec::new();
    let mut root = None;
    loop {
        match reader.read_event().map_err(mlp_err)? {
            Event::Start(e) | Event::Empty(e) if root.is_some() => {
                return Err(Error::Mlp(format!("content after the root element: <{}>", String::from_utf8_lossy(e.name().as_ref()))));
            }
            Event::Start(e) => stack.push(element(&e)?),
            Event::Empty(e) => {
                let el = element(&e)?;
                match stack.last_mut() {
                    Some(parent) => parent.children.push(el),
                    None => root = Some(el),
                }
            }
            Event::End(e) => {
                let el = stack.pop().ok_or_else(|| Error::Mlp("unbalanced end tag".into()))?;
                if e.name().as_ref() != el.name.as_bytes() {
                    return Err(Error::Mlp(format!("</{}> closes <{}>", String::from_utf8_lossy(e.name().as_ref()), el.name)));
                }
                match stack.last_mut() {
                    Some(parent) => parent.children.push(el),
                    None => root = Some(el),
                }
            }
            Event::Text(t) => {
                let el = stack.last_mut().ok_or_else(|| Error::Mlp("text outside the root element".into()))?;
                el.text.push_str(&t.unescape().map_err(mlp_err)?);
            }
            Event::Eof => break,
            _ => {}
        }
    }
    if !stack.is_empty() {
        return Err(Error::Mlp("unterminated element".into()));
    }
    root.ok_or_else(|| Error::Mlp("empty document".into()))
}

fn element(e: &BytesStart<'_>) -> Result<Element, Error> {
    let mut el = start(std::str::from_utf8(e.name().as_ref()).map_err(mlp_err)?);
    for a in e.attributes() {
        let a = a.map_err(mlp_err)?;
        let key = std::str::from_utf8(a.key.as_ref()).map_err(mlp_err)?.to_owned();
        el.attrs.push((key, a.unescape_value().map_err(mlp_err)?.into_owned()));
    }
    Ok(el)
}

struct Xml(Writer<Vec<u8>>);

impl Xml {
    fn new() -> Xml {
        let mut w = Writer::new(Vec::new());
        w.write_event(Event::Decl(BytesDecl::new("1.0", Some("UTF-8"), None))).expect("writing to memory");
        Xml(w)
    }

    fn open(&mut self, name: &str, attrs: &[(&str, &str)]) {
        let e = BytesStart::new(name).with_attributes(attrs.iter().copied());
        self.0.write_event(Event::Start(e)).expect("writing to memory");
    }

    fn close(&mut self, name: &str) {
        self.0.write_event(Event::End(BytesEnd::new(name))).expect("writing to memory");
    }

    fn leaf(&mut self, name: &str, attrs: &[(&str, &str)], text: &str) {
        self.open(name, attrs);
        self.0.write_event(Event::Text(BytesText::new(text))).expect("writing to memory");
        self.close(name);
    }

    fn finish(self) -> String {
        String::from_utf8(self.0.into_inner()).expect("XML writer emits UTF-8")
    }
}

pub fn encode_request(req: &MlpRequest) -> String {
    let mut x = Xml::new();
    let id = req.id.to_string();
    x.open("svc_init", &[("ver", MLP_VERSION), ("req_id", &id)]);
    x.open("hdr", &[]);
    x.open("client", &[]);
    x.leaf("pwd", &[], &req.credential);
    x.close("client");
    x.close("hdr");
    x.open("slir", &[]);
    x.open("msids", &[]);
    for sim in &req.sim_ids {
        x.leaf("msid", &[("type", "IMSI")], sim);
    }
    x.close("msids");
    x.leaf("salve_digest", &[], &req.session_digest.to_hex());
    x.close("slir");
    x.close("svc_init");
    x.finish()
}

pub fn decode_request(xml: &str) -> Result<MlpRequest, Error> {
    let root = parse(xml)?;
    if root.name != "svc_init" {
        return Err(Error::Mlp(format!("expected <svc_init>, got <{}>", root.name)));
    }
    let slir = root.child("slir")?;
    let digest = slir.child("salve_digest")?.text.trim();
    Ok(MlpRequest {
        id: root.req_id()?,
        credential: root.path(&["hdr", "client", "pwd"])?.text.clone(),
        sim_ids: slir.child("msids")?.children.iter().filter(|c| c.name == "msid").map(|c| c.text.clone()).collect(),
        session_digest: Digest::from_hex(digest).ok_or_else(|| Error::Mlp(format!("bad digest `{digest}`")))?,
    })
}

/// The `<salve_statement>` element: Base64 of the canonical statement
/// bytes followed by the signature.
pub fn statement_element(s: &LocationStatement) -> String {
    let mut w = Writer::new(Vec::new());
    let ver = STATEMENT_VERSION.to_string();
    let e = BytesStart::new("salve_statement").with_attributes([("ver", ver.as_str())]);
    w.write_event(Event::Start(e)).expect("writing to memory");
    let b64 = B64.encode(s.to_bytes());
    w.write_event(Event::Text(BytesText::new(&b64))).expect("writing to memory");
    w.write_event(Event::End(BytesEnd::new("salve_statement"))).expect("writing to memory");
    String::from_utf8(w.into_inner()).expect("XML writer emits UTF-8")
}

pub fn encode_response(resp: &MlpResponse) -> String {
    let mut x = Xml::new();
    let id = resp.id.to_string();
    x.open("slia", &[("ver", MLP_VERSION), ("req_id", &id)]);
    let code = resid(resp.status).to_string();
    x.leaf("result", &[("resid", &code)], resp.status.as_str());
    if let Some(s) = &resp.statement {
        let ver = STATEMENT_VERSION.to_string();
        x.leaf("salve_statement", &[("ver", &ver)], &B64.encode(s.to_bytes()));
    }
    x.close("slia");
    x.finish()
}

pub fn decode_response(xml: &str) -> Result<MlpResponse, Error> {
    let root = parse(xml)?;
    if root.name != "slia" {
        return Err(Error::Mlp(format!("expected <slia>, got <{}>", root.name)));
    }
    let result = root.child("result")?;
    let status = MlpStatus::parse(result.text.trim()).ok_or_else(|| Error::Mlp(format!("unknown result `{}`", result.text)))?;
    let statement = match root.children.iter().find(|c| c.name == "salve_statement") {
        None => None,
        Some(el) => {
            let bytes = B64.decode(el.text.trim()).map_err(mlp_err)?;
            Some(LocationStatement::from_bytes(&bytes)?)
        }
    };
    if statement.is_some() != (status == MlpStatus::Ok) {
        return Err(Error::Mlp("statement present exactly when the result is OK".into()));
    }
    Ok(MlpResponse { id: root.req_id()?, status, statement })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::test_keys;
    use salve_core::crypto::hash;
    use salve_core::geo::GeoLocation;
    use salve_core::gmlc::StatementEntry;

    fn statement(sims: &[&str]) -> LocationStatement {
        let g = GeoLocation::new(47.3769, 8.5417, 408.0);
        let entries = sims.iter().map(|s| StatementEntry::new(s, &g, 1_700_000_000).unwrap()).collect();
        LocationStatement::sign(hash(b"k"), entries, &test_keys().gmlc).unwrap()
    }

    #[test]
    fn request_round_trip_with_escaping() {
        let req = MlpRequest {
            id: 42,
            credential: "p<w>&\"d'".into(),
            sim_ids: vec!["228011234567890".into(), "228019999999999".into()],
            session_digest: hash(b"h(k)"),
        };
        let xml = encode_request(&req);
        assert!(xml.contains("&lt;w&gt;&amp;"));
        assert_eq!(decode_request(&xml).unwrap(), req);
    }

    #[test]
    fn response_round_trip() {
        let ok = MlpResponse { id: 3, status: MlpStatus::Ok, statement: Some(statement(&["228011234567890"])) };
        assert_eq!(decode_response(&encode_response(&ok)).unwrap(), ok);
        for status in [MlpStatus::Unauthorized, MlpStatus::UnknownSim] {
            let refused = MlpResponse { id: 4, status, statement: None };
            let xml = encode_response(&refused);
            assert!(xml.contains(&format!("resid=\"{}\"", resid(status))));
            assert_eq!(decode_response(&xml).unwrap(), refused);
        }
    }

    #[test]
    fn single_sim_statement_element_size() {
        let el = statement_element(&statement(&["228011234567890"]));
        assert!(el.starts_with("<salve_statement ver=\"1\">"));
        // 75 canonical bytes and a 256-byte signature, Base64 encoded.
        assert_eq!(el.len(), 25 + 444 + 18);
    }

    #[test]
    fn rejects_malformed_documents() {
        for bad in [
            "",
            "<slia>",
            "<slia req_id=\"1\"><result>OK</result></slia>",
            "<slia req_id=\"1\"><result>MAYBE</result></slia>",
            "<slia req_id=\"x\"><result>UNAUTHORIZED</result></slia>",
            "<slia req_id=\"1\"><result>OK</result><salve_statement>!!!</salve_statement></slia>",
            "<svc_init req_id=\"1\"></svc_init>",
            "<a></b>",
            "<slia req_id=\"1\"><result>UNAUTHORIZED</result></slia><extra/>",
        ] {
            assert!(decode_response(bad).is_err() || decode_request(bad).is_err(), "{bad}");
            assert!(decode_response(bad).is_err(), "{bad}");
        }
    }
}
