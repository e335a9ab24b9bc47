//! HTML shells handed to browsers. They carry no data: the portal loads
//! everything from the API prefix.

use axum::response::Html;

use crate::routes::{Route, API_PREFIX};

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn shell(route: &Route) -> Html<String> {
    Html(format!(
        "<!doctype html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n\
         <title>gridhall · {title}</title>\n\
         <meta name=\"gridhall-api\" content=\"{API_PREFIX}\">\n\
         <script type=\"module\" src=\"/static/portal.js\"></script>\n</head>\n\
         <body>\n<div id=\"app\" data-page=\"{id}\" data-data=\"{data}\"></div>\n\
         <noscript>{title}: this page needs JavaScript; the same data is available at <a href=\"{data}\">{data}</a>.</noscript>\n\
         </body>\n</html>\n",
        title = escape(route.summary),
        id = route.id,
        data = escape(&route.api_path()),
    ))
}
