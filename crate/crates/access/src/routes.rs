use serde_json::{json, Value};

/// REST route of one contract method.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RouteSpec {
    pub method: &'static str,
    pub http: &'static str,
    pub path: &'static str,
}

const fn route(method: &'static str, http: &'static str, path: &'static str) -> RouteSpec {
    RouteSpec { method, http, path }
}

/// Exactly one route per contract method.
pub const ROUTES: [RouteSpec; 12] = [
    route("addPatient", "POST", "/patients"),
    route("addDonor", "POST", "/donors"),
    route("getPatient", "GET", "/patients/{id}"),
    route("getDonor", "GET", "/donors/{id}"),
    route("getAllPatients", "GET", "/patients"),
    route("getAllDonors", "GET", "/donors"),
    route("getMyPatients", "GET", "/hospitals/{org}/patients"),
    route("getMyDonors", "GET", "/hospitals/{org}/donors"),
    route("deletePatient", "DELETE", "/patients/{id}"),
    route("deleteDonor", "DELETE", "/donors/{id}"),
    route("findMatch", "POST", "/patients/{id}/find-match"),
    route("selectMatch", "POST", "/match/select"),
];

pub fn route_of(method: &str) -> Option<RouteSpec> {
    ROUTES.iter().copied().find(|r| r.method == method)
}

/// A concrete HTTP call for a contract method and its positional args.
#[derive(Clone, Debug, PartialEq)]
pub struct Request {
    pub http: &'static str,
    pub path: String,
    pub body: Option<Value>,
}

/// Maps `method args...` to its route. Path segments are percent-encoded.
pub fn request_for(method: &str, args: &[String]) -> Result<Request, String> {
    let spec = route_of(method).ok_or_else(|| format!("unknown method `{method}`"))?;
    let want = match method {
        "getAllPatients" | "getAllDonors" => 0,
        "selectMatch" => 2,
        _ => 1,
    };
    if args.len() != want {
        return Err(format!("{method} takes {want} argument(s), got {}", args.len()));
    }
    let mut path = spec.path.to_string();
    let mut body = None;
    match method {
        "addPatient" | "addDonor" => {
            let v: Value = serde_json::from_str(&args[0]).map_err(|e| format!("record body is not JSON: {e}"))?;
            body = Some(v);
        }
        "selectMatch" => body = Some(json!({"patientId": args[0], "donorId": args[1]})),
        "getMyPatients" | "getMyDonors" => path = path.replace("{org}", &encode(&args[0])),
        "getAllPatients" | "getAllDonors" => {}
        _ => path = path.replace("{id}", &encode(&args[0])),
    }
    Ok(Request { http: spec.http, path, body })
}

fn encode(segment: &str) -> String {
    let mut out = String::new();
    for b in segment.bytes() {
        if b.is_ascii_alphanumeric() || b"-_.~".contains(&b) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use organchain_core::donation::METHODS;

    #[test]
    fn every_contract_method_has_one_route() {
        for (m, _, _) in METHODS {
            assert_eq!(ROUTES.iter().filter(|r| r.method == m).count(), 1, "{m}");
        }
        assert_eq!(ROUTES.len(), METHODS.len());
        let mut pairs: Vec<_> = ROUTES.iter().map(|r| (r.http, r.path)).collect();
        pairs.sort();
        pairs.dedup();
        assert_eq!(pairs.len(), ROUTES.len());
    }

    #[test]
    fn requests_are_built_from_args() {
        let r = request_for("selectMatch", &["p1".into(), "d1".into()]).unwrap();
        assert_eq!((r.http, r.path.as_str()), ("POST", "/match/select"));
        assert_eq!(r.body.unwrap(), json!({"patientId": "p1", "donorId": "d1"}));
        let r = request_for("getMyDonors", &["hospA".into()]).unwrap();
        assert_eq!(r.path, "/hospitals/hospA/donors");
        let r = request_for("getPatient", &["a b/c".into()]).unwrap();
        assert_eq!(r.path, "/patients/a%20b%2Fc");
        assert!(request_for("getPatient", &[]).is_err());
        assert!(request_for("addDonor", &["{".into()]).is_err());
        assert!(request_for("mint", &[]).is_err());
    }
}
