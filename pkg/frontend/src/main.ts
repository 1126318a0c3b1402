import { ApiClient } from "./api.js";
import { App } from "./app.js";

const root = document.getElementById("app");
if (root) {
  const app = new App(root, new ApiClient());
  void app.boot().then(() => {
    // deep link: #/namespace/name opens that level directly
    const hash = window.location.hash;
    if (hash.startsWith("#/") && hash.length > 2) {
      void app.selectLevel(hash.slice(2));
    }
  });
}
