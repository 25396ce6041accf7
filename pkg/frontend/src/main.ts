import { ReviewApi } from './api.js';
import { createReviewApp } from './app.js';

const app = createReviewApp(new ReviewApi(''), document);
void app.start();
